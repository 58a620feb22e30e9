//! Command-line front end: dataset generation, training, inference,
//! evaluation, FLOP reporting and figure export.
//!
//! Every failure path prints a single `ERROR(<code>): message` line to
//! stderr and exits nonzero so scripts can grep for the code.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use vot::ckpt::{load_checkpoint, save_checkpoint, CkptError};
use vot::config::{self, ConfigError, Profile, RunConfig};
use vot::data::image_io::{load_image_sequence, write_raster, ImageIoError};
use vot::data::tum::{load_tum_trajectory, write_tum_trajectory, TumError};
use vot::data::{DataError, DatasetManifest, Intrinsics, Raster, SequenceSample};
use vot::decoder::count_flops;
use vot::eval::{evaluate, AlignMode, EvalError, SegmentDef};
use vot::geometry::{compose_poses, GeometryError, Pose, Trajectory};
use vot::model::{ModelError, VotModel};
use vot::train::{TrainError, Trainer};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Args(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Tum(#[from] TumError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ckpt(#[from] CkptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Stable machine-readable code for the stderr prefix.
    fn code(&self) -> &'static str {
        match self {
            CliError::Args(_) => "ARGS",
            CliError::Config(_) => "CONFIG",
            CliError::Data(_) | CliError::Image(_) => "DATA",
            CliError::Tum(_) => "TUM",
            CliError::Geometry(_) => "GEOM",
            CliError::Ckpt(_) => "CKPT",
            CliError::Model(_) => "MODEL",
            CliError::Train(_) => "TRAIN",
            CliError::Eval(_) => "EVAL",
            CliError::Io { .. } => "IO",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Parser)]
#[command(name = "vot", version, about = "Pose-regressing video transformer for visual odometry")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the sequences listed in a manifest into frame directories.
    GenData {
        /// Manifest JSON describing the sequences.
        manifest: PathBuf,
        /// Dataset directory to create.
        out_dir: PathBuf,
    },
    /// Train a model on a dataset directory produced by gen-data.
    Train {
        /// Base profile: desk or paper.
        #[arg(long, default_value = "desk")]
        profile: String,
        /// TOML or JSON file overriding profile fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (one subdirectory per sequence).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to write; loss.csv and config.json land beside it.
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint, which carries its own config.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Write the checkpoint every N epochs (the final epoch always saves).
        #[arg(long, default_value_t = 1)]
        save_every: usize,
        /// Stop after N epochs in this invocation, saving for a later --resume.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Predict a trajectory for a sequence of frames and write it as TUM.
    Predict {
        /// Checkpoint written by train.
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of PGM/PPM frames named by timestamp.
        #[arg(long, conflicts_with_all = ["manifest", "sequence"])]
        images: Option<PathBuf>,
        /// Re-render one sequence from this manifest instead.
        #[arg(long, requires = "sequence")]
        manifest: Option<PathBuf>,
        /// Sequence id within --manifest.
        #[arg(long, requires = "manifest")]
        sequence: Option<String>,
        /// Output trajectory file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimated trajectory against ground truth.
    Eval {
        /// Ground-truth TUM file.
        gt: PathBuf,
        /// Estimated TUM file.
        est: PathBuf,
        /// Alignment before the metrics: none, se3 or sim3.
        #[arg(long, default_value = "none")]
        align: String,
        /// "pair" for consecutive frames, or a segment length in meters.
        #[arg(long, default_value = "pair")]
        segment: String,
        /// Also write the report here, as .json or .csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print attention FLOP counts for a config.
    Flops {
        /// Base profile: desk or paper.
        #[arg(long, default_value = "desk")]
        profile: String,
        /// TOML or JSON file overriding profile fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Emit figures: trajectory SVG or attention-map PGMs.
    Plot {
        #[command(subcommand)]
        what: PlotCmd,
    },
}

#[derive(Subcommand)]
enum PlotCmd {
    /// Top-down XZ view of one or more TUM trajectories.
    Traj {
        /// Trajectory files; the first is drawn as ground truth.
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        /// Output SVG file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer, per-head camera attention over a sequence's patch grid.
    Attention {
        /// Checkpoint written by train.
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of frames; the first window of the sequence is used.
        #[arg(long)]
        images: PathBuf,
        /// Directory receiving one PGM per layer, frame and head.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("ERROR({}): {e}", e.code());
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenData { manifest, out_dir } => gen_data(&manifest, &out_dir),
        Cmd::Train { profile, config, data, out, resume, save_every, stop_after } => train(
            &profile,
            config.as_deref(),
            &data,
            &out,
            resume.as_deref(),
            save_every,
            stop_after,
        ),
        Cmd::Predict { ckpt, images, manifest, sequence, out } => {
            predict(&ckpt, images.as_deref(), manifest.as_deref(), sequence.as_deref(), &out)
        }
        Cmd::Eval { gt, est, align, segment, out } => {
            eval_cmd(&gt, &est, &align, &segment, out.as_deref())
        }
        Cmd::Flops { profile, config } => flops_cmd(&profile, config.as_deref()),
        Cmd::Plot { what } => match what {
            PlotCmd::Traj { trajectories, out } => plot_traj(&trajectories, &out),
            PlotCmd::Attention { ckpt, images, out } => plot_attention(&ckpt, &images, &out),
        },
    }
}

/// Profile + optional file overlay + optional VOT_SEED env override.
fn resolve_config(profile: &str, file: Option<&Path>) -> Result<RunConfig, CliError> {
    let profile: Profile = profile.parse()?;
    let seed = match std::env::var("VOT_SEED") {
        Ok(raw) => Some(raw.trim().parse::<u64>().map_err(|_| {
            CliError::Args(format!("VOT_SEED must be an unsigned integer, got {raw:?}"))
        })?),
        Err(_) => None,
    };
    Ok(config::resolve(profile, file, seed)?)
}

fn gen_data(manifest_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| {
        CliError::Args(format!("manifest {}: {e}", manifest_path.display()))
    })?;
    if manifest.sequences.is_empty() {
        return Err(CliError::Args("manifest lists no sequences".into()));
    }
    for (i, entry) in manifest.sequences.iter().enumerate() {
        if manifest.sequences[..i].iter().any(|other| other.id == entry.id) {
            return Err(CliError::Args(format!("duplicate sequence id {:?}", entry.id)));
        }
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for entry in &mut manifest.sequences {
        let sample = entry.generate()?;
        let dir = out_dir.join(&entry.id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let ext = if entry.channels == 1 { "pgm" } else { "ppm" };
        for (frame, ts) in sample.frames.iter().zip(&sample.timestamps) {
            write_raster(frame, &dir.join(format!("{:06}.{ext}", *ts as u64)))?;
        }
        // Re-anchor to identity so each gt.txt stands alone.
        let first = sample.abs_poses_gt[0];
        let anchored: Vec<Pose> = sample.abs_poses_gt.iter().map(|p| first.relative_to(p)).collect();
        let traj = Trajectory::new(anchored, sample.timestamps.clone())?;
        write_tum_trajectory(&traj, &dir.join("gt.txt"))?;
        entry.dir = Some(PathBuf::from(&entry.id));
        println!("{}: {} frames", entry.id, sample.frames.len());
    }
    let copy = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let manifest_out = out_dir.join("manifest.json");
    fs::write(&manifest_out, copy + "\n").map_err(io_err(&manifest_out))?;
    println!("wrote {}", manifest_out.display());
    Ok(())
}

/// Loads every sequence subdirectory (sorted by name) as one training sample.
fn load_dataset(dir: &Path) -> Result<Vec<SequenceSample>, CliError> {
    let mut seq_dirs: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() && path.join("gt.txt").is_file() {
            seq_dirs.push(path);
        }
    }
    seq_dirs.sort();
    if seq_dirs.is_empty() {
        return Err(CliError::Args(format!(
            "no sequence directories (with gt.txt) under {}",
            dir.display()
        )));
    }
    seq_dirs.iter().map(|d| load_sequence_dir(d)).collect()
}

fn load_sequence_dir(dir: &Path) -> Result<SequenceSample, CliError> {
    let (frames, timestamps) = load_image_sequence(dir)?;
    let gt = load_tum_trajectory(&dir.join("gt.txt"))?;
    if gt.len() != frames.len() {
        return Err(CliError::Args(format!(
            "{}: {} frames but {} ground-truth poses",
            dir.display(),
            frames.len(),
            gt.len()
        )));
    }
    for (a, b) in timestamps.iter().zip(gt.timestamps()) {
        if (a - b).abs() > 1e-6 {
            return Err(CliError::Args(format!(
                "{}: frame timestamp {a} does not match ground truth {b}",
                dir.display()
            )));
        }
    }
    let (h, w) = (frames[0].height, frames[0].width);
    Ok(SequenceSample {
        rel_poses_gt: gt.relative_poses(),
        abs_poses_gt: gt.poses().to_vec(),
        frames,
        timestamps,
        intrinsics: Intrinsics::default_for(w, h),
    })
}

fn check_samples(cfg: &RunConfig, samples: &[SequenceSample]) -> Result<(), CliError> {
    for s in samples {
        let f = &s.frames[0];
        if f.height != cfg.image.height || f.width != cfg.image.width || f.channels != cfg.image.channels
        {
            return Err(CliError::Args(format!(
                "dataset frames are {}x{}x{} but the config expects {}x{}x{}",
                f.height, f.width, f.channels, cfg.image.height, cfg.image.width, cfg.image.channels
            )));
        }
        if s.frames.len() < 2 {
            return Err(CliError::Args("a sequence has fewer than 2 frames".into()));
        }
    }
    Ok(())
}

fn train(
    profile: &str,
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    save_every: usize,
    stop_after: Option<usize>,
) -> Result<(), CliError> {
    if save_every == 0 {
        return Err(CliError::Args("--save-every must be at least 1".into()));
    }
    if stop_after == Some(0) {
        return Err(CliError::Args("--stop-after must be at least 1".into()));
    }
    let samples = load_dataset(data)?;
    let resuming = resume.is_some();
    let (cfg, mut trainer) = match resume {
        Some(ckpt) => load_checkpoint(ckpt)?,
        None => {
            let cfg = resolve_config(profile, config)?;
            let model = VotModel::new(
                cfg.encoder,
                cfg.decoder,
                cfg.head.representation,
                cfg.head.weights(),
                cfg.image.channels,
                cfg.train.seed,
            );
            let trainer = Trainer::new(model, cfg.train);
            (cfg, trainer)
        }
    };
    check_samples(&cfg, &samples)?;

    let out_dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    cfg.write_effective(&out_dir).map_err(io_err(&out_dir))?;

    let csv_path = out_dir.join("loss.csv");
    let mut csv = if resuming && csv_path.is_file() {
        fs::OpenOptions::new().append(true).open(&csv_path).map_err(io_err(&csv_path))?
    } else {
        let mut f = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
        f.write_all(b"epoch,step,rot_loss,trans_loss,total,lr\n").map_err(io_err(&csv_path))?;
        f
    };

    let total_epochs = cfg.train.epochs;
    let mut ran = 0usize;
    let mut saved = false;
    while !trainer.is_done() {
        let mut sink_err: Option<std::io::Error> = None;
        trainer.run_epoch(&samples, |rec| {
            if sink_err.is_some() {
                return;
            }
            let row = format!(
                "{},{},{},{},{},{}\n",
                rec.epoch, rec.step, rec.rotation, rec.translation, rec.total, rec.lr
            );
            if let Err(e) = csv.write_all(row.as_bytes()) {
                sink_err = Some(e);
            }
        })?;
        if let Some(source) = sink_err {
            return Err(CliError::Io { path: csv_path.clone(), source });
        }
        ran += 1;
        let stop = stop_after == Some(ran);
        let done_epochs = trainer.epoch();
        if done_epochs % save_every == 0 || trainer.is_done() || stop {
            save_checkpoint(out, &cfg, &trainer)?;
            saved = true;
        }
        println!("epoch {done_epochs}/{total_epochs}");
        if stop {
            break;
        }
    }
    if !saved {
        save_checkpoint(out, &cfg, &trainer)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn predict(
    ckpt: &Path,
    images: Option<&Path>,
    manifest: Option<&Path>,
    sequence: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let (cfg, trainer) = load_checkpoint(ckpt)?;
    let model = trainer.into_model();

    let (frames, timestamps) = match (images, manifest) {
        (Some(dir), None) => load_image_sequence(dir)?,
        (None, Some(man_path)) => {
            let id = sequence.expect("clap ties --sequence to --manifest");
            let text = fs::read_to_string(man_path).map_err(io_err(man_path))?;
            let man: DatasetManifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Args(format!("manifest {}: {e}", man_path.display())))?;
            let entry = man
                .sequences
                .iter()
                .find(|e| e.id == id)
                .ok_or_else(|| CliError::Args(format!("sequence {id:?} not in manifest")))?;
            let sample = entry.generate()?;
            (sample.frames, sample.timestamps)
        }
        _ => {
            return Err(CliError::Args(
                "pass either --images DIR or --manifest FILE --sequence ID".into(),
            ));
        }
    };
    if frames.len() < 2 {
        return Err(CliError::Args(format!("need at least 2 frames, found {}", frames.len())));
    }

    let rels = model.predict_chunked(&frames, cfg.data.views)?;
    // Absolute trajectory from an identity start; timestamps are kept from
    // the source frames so the output lines up with the sequence's gt.txt.
    let poses = compose_poses(&Pose::identity(), &rels);
    let traj = Trajectory::new(poses, timestamps)?;
    write_tum_trajectory(&traj, out)?;
    println!("wrote {} poses to {}", traj.len(), out.display());
    Ok(())
}

fn parse_align(s: &str) -> Result<AlignMode, CliError> {
    match s {
        "none" => Ok(AlignMode::None),
        "se3" => Ok(AlignMode::Se3),
        "sim3" => Ok(AlignMode::Sim3),
        other => Err(CliError::Args(format!("--align must be none, se3 or sim3, got {other:?}"))),
    }
}

fn parse_segment(s: &str) -> Result<SegmentDef, CliError> {
    if s == "pair" || s == "per_frame_pair" {
        return Ok(SegmentDef::PerFramePair);
    }
    match s.parse::<f64>() {
        Ok(m) if m > 0.0 && m.is_finite() => Ok(SegmentDef::PerMeter(m)),
        _ => Err(CliError::Args(format!(
            "--segment must be \"pair\" or a positive length in meters, got {s:?}"
        ))),
    }
}

fn eval_cmd(
    gt_path: &Path,
    est_path: &Path,
    align: &str,
    segment: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let gt = load_tum_trajectory(gt_path)?;
    let est = load_tum_trajectory(est_path)?;
    if gt.len() == est.len() {
        for (a, b) in gt.timestamps().iter().zip(est.timestamps()) {
            if (a - b).abs() > 1e-6 {
                return Err(CliError::Args(format!(
                    "timestamp mismatch: gt has {a}, estimate has {b}"
                )));
            }
        }
    }
    let report = evaluate(&gt, &est, parse_align(align)?, parse_segment(segment)?)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    if let Some(path) = out {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let body = match ext {
            "csv" => report.to_csv(),
            "json" => json + "\n",
            other => {
                return Err(CliError::Args(format!(
                    "--out must end in .json or .csv, got extension {other:?}"
                )));
            }
        };
        fs::write(path, body).map_err(io_err(path))?;
    }
    Ok(())
}

fn flops_cmd(profile: &str, config: Option<&Path>) -> Result<(), CliError> {
    let cfg = resolve_config(profile, config)?;
    let t = cfg.data.views;
    let hw = (cfg.image.height / cfg.encoder.patch_size)
        * (cfg.image.width / cfg.encoder.patch_size);
    let counts = count_flops(&cfg.decoder, t, hw);
    println!("frames            {t}");
    println!("patch tokens      {hw}");
    println!("hidden dim        {}", cfg.decoder.hidden_dim);
    println!("layers            {}", cfg.decoder.layers);
    println!("time_space_flops  {}", counts.time_space);
    println!("full_flops        {}", counts.full);
    println!("ratio             {:.4}", counts.ratio());
    Ok(())
}

const PLOT_COLORS: [&str; 6] = ["#444444", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

fn plot_traj(files: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut series = Vec::with_capacity(files.len());
    for path in files {
        let traj = load_tum_trajectory(path)?;
        let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory").to_string();
        let points: Vec<(f64, f64)> =
            traj.poses().iter().map(|p| (p.translation[0], p.translation[2])).collect();
        series.push((label, points));
    }
    let svg = render_svg(&series);
    fs::write(out, svg).map_err(io_err(out))?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Top-down XZ view: equal world scale on both axes, +z up, start markers,
/// legend in reading order.
fn render_svg(series: &[(String, Vec<(f64, f64)>)]) -> String {
    const SIZE: f64 = 720.0;
    const PAD: f64 = 50.0;

    let all = series.iter().flat_map(|(_, pts)| pts.iter());
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_z, mut max_z) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, z) in all {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_z = min_z.min(z);
        max_z = max_z.max(z);
    }
    let span = (max_x - min_x).max(max_z - min_z).max(1e-6) * 1.1;
    let (cx, cz) = ((min_x + max_x) / 2.0, (min_z + max_z) / 2.0);
    let scale = (SIZE - 2.0 * PAD) / span;
    let to_screen = |x: f64, z: f64| {
        let sx = SIZE / 2.0 + (x - cx) * scale;
        let sy = SIZE / 2.0 - (z - cz) * scale;
        (sx, sy)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\" \
         stroke=\"#cccccc\"/>\n"
    ));
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PLOT_COLORS[i % PLOT_COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, z)| {
                let (sx, sy) = to_screen(x, z);
                format!("{sx:.2},{sy:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        ));
        if let Some(&(x0, z0)) = pts.first() {
            let (sx, sy) = to_screen(x0, z0);
            svg.push_str(&format!(
                "  <circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"5\" fill=\"{color}\"/>\n"
            ));
        }
        let ly = 24.0 + 20.0 * i as f64;
        svg.push_str(&format!(
            "  <rect x=\"16\" y=\"{:.0}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
            ly - 10.0
        ));
        svg.push_str(&format!(
            "  <text x=\"34\" y=\"{ly:.0}\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
            xml_escape(label)
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">x [m]</text>\n",
        SIZE / 2.0,
        SIZE - 14.0
    ));
    svg.push_str(&format!(
        "  <text x=\"14\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\" transform=\"rotate(-90 14 {:.0})\">z [m]</text>\n",
        SIZE / 2.0,
        SIZE / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn plot_attention(ckpt: &Path, images: &Path, out_dir: &Path) -> Result<(), CliError> {
    let (cfg, trainer) = load_checkpoint(ckpt)?;
    let model = trainer.into_model();
    let (frames, _) = load_image_sequence(images)?;
    let take = cfg.data.views.min(frames.len());
    if take < 2 {
        return Err(CliError::Args(format!("need at least 2 frames, found {}", frames.len())));
    }
    let (_, maps) = model.predict_with_maps(&frames[..take], true)?;
    let maps = maps.expect("maps were requested");

    let gh = cfg.image.height / cfg.encoder.patch_size;
    let gw = cfg.image.width / cfg.encoder.patch_size;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = 0usize;
    for (l, layer) in maps.iter().enumerate() {
        for (t, heads) in layer.rows.iter().enumerate() {
            for (h, row) in heads.iter().enumerate() {
                // Row 0 is the camera token's self-weight; the rest is the
                // patch grid in row-major order.
                let patches = &row[1..];
                if patches.len() != gh * gw {
                    return Err(CliError::Args(format!(
                        "attention row has {} patches, expected {}x{}",
                        patches.len(),
                        gh,
                        gw
                    )));
                }
                let peak = patches.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
                let raster = Raster {
                    height: gh,
                    width: gw,
                    channels: 1,
                    data: patches.iter().map(|w| w / peak).collect(),
                };
                write_raster(&raster, &out_dir.join(format!("attn_l{l}_t{t}_h{h}.pgm")))?;
                written += 1;
            }
        }
    }
    println!("wrote {written} maps to {}", out_dir.display());
    Ok(())
}
