//! Command-line front end: generate the synthetic benchmark, train both
//! models, annotate, evaluate, and produce the ablation report. All file
//! layout under the output root lives here, not in the library modules.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::assess::{train_assess, AssessModel, TrainSample};
use crate::ckpt::write_curve;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::infer::{annotate_video, compute_intermediates, Models, RefineMode, VideoInputs};
use crate::metrics::{evaluate, QualityMapParams, DEFAULT_ACC_THRESHOLDS};
use crate::pipeline::split_video;
use crate::plot::plot_curves;
use crate::refine::{train_refine, GeometryModel, SyntheticMaskOracle};
use crate::report::{ablation_reports, format_ablation, SequenceEval};
use crate::store::{
    read_annotations, read_tracker_dump, write_annotations, write_tracker_dump, AnnotationRecord,
    BBox, Direction, Source, TrackedFrame, VideoMeta,
};
use crate::synth::{assess_samples, generate_sequence, refine_samples, SynthSequence};

#[derive(Parser)]
#[command(name = "annotrack", about = "semi-automatic video box annotation on a synthetic benchmark")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set train.lr=0.01
    #[arg(long = "set", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic benchmark sequences.
    Synth,
    /// Print the anchor-to-anchor spans of one sequence.
    Split {
        /// Sequence directory (e.g. out/data/seq000).
        #[arg(long)]
        video: PathBuf,
    },
    /// Train the temporal quality scorer.
    TrainAssess,
    /// Train the Gaussian geometric prior.
    TrainRefine,
    /// Annotate one sequence with the trained models.
    Annotate {
        #[arg(long)]
        video: PathBuf,
    },
    /// Evaluate an annotated sequence against ground truth.
    Eval {
        #[arg(long)]
        video: PathBuf,
    },
    /// Ablation table over all sequences.
    Report,
}

/// Removes outputs registered with `track` unless `disarm` was called, so a
/// failed command does not leave partial artifacts behind.
struct CleanupGuard {
    paths: Vec<PathBuf>,
    armed: bool,
}

impl CleanupGuard {
    fn new() -> Self {
        CleanupGuard { paths: Vec::new(), armed: true }
    }

    fn track(&mut self, p: &Path) {
        self.paths.push(p.to_path_buf());
    }

    fn disarm(&mut self) {
        self.armed = false;
    }
}

impl Drop for CleanupGuard {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        for p in &self.paths {
            if p.is_dir() {
                let _ = fs::remove_dir_all(p);
            } else {
                let _ = fs::remove_file(p);
            }
        }
    }
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
    match cli.cmd {
        Cmd::Synth => cmd_synth(&cfg),
        Cmd::Split { video } => cmd_split(&cfg, &video),
        Cmd::TrainAssess => cmd_train_assess(&cfg),
        Cmd::TrainRefine => cmd_train_refine(&cfg),
        Cmd::Annotate { video } => cmd_annotate(&cfg, &video),
        Cmd::Eval { video } => cmd_eval(&cfg, &video),
        Cmd::Report => cmd_report(&cfg),
    }
}

fn mkdirs(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run.out_dir.join("data")
}

fn models_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run.out_dir.join("models")
}

fn seq_name(i: usize) -> String {
    format!("seq{i:03}")
}

fn boxes_of(records: &[AnnotationRecord]) -> BTreeMap<usize, BBox> {
    records
        .iter()
        .filter_map(|r| r.box_.map(|b| (r.frame_idx, b)))
        .collect()
}

fn manual_records(boxes: &BTreeMap<usize, BBox>) -> Vec<AnnotationRecord> {
    boxes
        .iter()
        .map(|(&frame_idx, &b)| AnnotationRecord {
            frame_idx,
            source: Source::Manual,
            box_: Some(b),
            quality: None,
        })
        .collect()
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let root = data_dir(cfg);
    mkdirs(&root)?;
    let mut guard = CleanupGuard::new();
    for i in 0..cfg.synth.sequences {
        let name = seq_name(i);
        let scfg = cfg.synth.to_synth_config(cfg.run.seed.wrapping_add(i as u64), name.clone());
        let seq = generate_sequence(&scfg)?;
        let dir = root.join(&name);
        guard.track(&dir);
        mkdirs(&dir)?;
        write_annotations(&manual_records(&seq.gt), &seq.meta, &dir.join("gt.csv"))?;
        write_annotations(&manual_records(&seq.anchors), &seq.meta, &dir.join("anchors.csv"))?;
        write_tracker_dump(&seq.fwd, Direction::Forward, &dir.join("fwd"))?;
        write_tracker_dump(&seq.bwd, Direction::Backward, &dir.join("bwd"))?;
        println!("{name}: {} frames, {} anchors", seq.meta.frame_count, seq.anchors.len());
    }
    guard.disarm();
    Ok(())
}

struct LoadedSeq {
    name: String,
    meta: VideoMeta,
    gt: BTreeMap<usize, BBox>,
    anchors: BTreeMap<usize, BBox>,
    fwd: Vec<TrackedFrame>,
    bwd: Vec<TrackedFrame>,
}

impl LoadedSeq {
    fn to_synth_sequence(&self) -> SynthSequence {
        SynthSequence {
            meta: self.meta.clone(),
            gt: self.gt.clone(),
            anchors: self.anchors.clone(),
            fwd: self.fwd.clone(),
            bwd: self.bwd.clone(),
        }
    }
}

fn load_seq(cfg: &RunConfig, dir: &Path) -> Result<LoadedSeq> {
    let (gt_records, meta) = read_annotations(&dir.join("gt.csv"))?;
    let (anchor_records, _) = read_annotations(&dir.join("anchors.csv"))?;
    let fwd = read_tracker_dump(&dir.join("fwd"), Direction::Forward, cfg.synth.map_side)?;
    let bwd = read_tracker_dump(&dir.join("bwd"), Direction::Backward, cfg.synth.map_side)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "seq".to_string());
    Ok(LoadedSeq { name, meta, gt: boxes_of(&gt_records), anchors: boxes_of(&anchor_records), fwd, bwd })
}

fn load_all_seqs(cfg: &RunConfig) -> Result<Vec<LoadedSeq>> {
    let root = data_dir(cfg);
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| Error::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no sequences under {} (run `synth` first)", root.display())));
    }
    dirs.iter().map(|d| load_seq(cfg, d)).collect()
}

/// Hold out the last quarter of the sequences (at least one when possible).
fn train_val_split<T>(items: &[T]) -> (&[T], &[T]) {
    if items.len() < 2 {
        return (items, &[]);
    }
    let n_val = (items.len() / 4).max(1);
    items.split_at(items.len() - n_val)
}

pub fn cmd_split(cfg: &RunConfig, video: &Path) -> Result<()> {
    let seq = load_seq(cfg, video)?;
    let anchors: Vec<usize> = seq.anchors.keys().copied().collect();
    for (s, e) in split_video(&seq.meta, &anchors)? {
        println!("{s} {e}");
    }
    Ok(())
}

pub fn cmd_train_assess(cfg: &RunConfig) -> Result<()> {
    let seqs = load_all_seqs(cfg)?;
    let qp = QualityMapParams::default();
    let (train_seqs, val_seqs) = train_val_split(&seqs);
    let mut train: Vec<TrainSample> = Vec::new();
    let mut val: Vec<TrainSample> = Vec::new();
    for s in train_seqs {
        train.extend(assess_samples(&s.to_synth_sequence(), cfg.model.window_len, cfg.infer.stride, &qp)?);
    }
    for s in val_seqs {
        val.extend(assess_samples(&s.to_synth_sequence(), cfg.model.window_len, cfg.infer.stride, &qp)?);
    }
    let meta = seqs[0].meta.clone();
    let mut model = AssessModel::new(cfg.model.to_assess_config(cfg.run.seed)?);
    let tc = cfg.train.to_train_config(cfg.run.seed);
    let report = train_assess(&mut model, &train, &val, &meta, &tc)?;

    let dir = models_dir(cfg);
    mkdirs(&dir)?;
    let mut guard = CleanupGuard::new();
    let ckpt = dir.join("assess.json");
    guard.track(&ckpt);
    model.save(&ckpt)?;
    let curve = dir.join("assess_curve.txt");
    guard.track(&curve);
    write_curve(&curve, &report.curve)?;
    let png = dir.join("assess_curve.png");
    guard.track(&png);
    plot_curves(&png, &[("train", &report.curve)], 480, 300)?;
    guard.disarm();
    println!(
        "trained quality scorer on {} windows; final loss {:.6}{}",
        train.len(),
        report.curve.last().map(|(_, l)| *l).unwrap_or(f64::NAN),
        report.val_loss.map(|v| format!(", val {v:.6}")).unwrap_or_default()
    );
    Ok(())
}

pub fn cmd_train_refine(cfg: &RunConfig) -> Result<()> {
    let seqs = load_all_seqs(cfg)?;
    let gcfg = cfg.model.to_geometry_config(cfg.run.seed)?;
    let (train_seqs, val_seqs) = train_val_split(&seqs);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for s in train_seqs {
        let oracle = SyntheticMaskOracle::new(s.gt.clone(), cfg.infer.distractors, cfg.infer.mask_noise, cfg.run.seed);
        train.extend(refine_samples(&s.to_synth_sequence(), &gcfg, &oracle, cfg.infer.stride)?);
    }
    for s in val_seqs {
        let oracle = SyntheticMaskOracle::new(s.gt.clone(), cfg.infer.distractors, cfg.infer.mask_noise, cfg.run.seed);
        val.extend(refine_samples(&s.to_synth_sequence(), &gcfg, &oracle, cfg.infer.stride)?);
    }
    let meta = seqs[0].meta.clone();
    let mut model = GeometryModel::new(gcfg);
    let tc = cfg.train.to_train_config(cfg.run.seed);
    let report = train_refine(&mut model, &train, &val, &meta, Default::default(), &tc)?;

    let dir = models_dir(cfg);
    mkdirs(&dir)?;
    let mut guard = CleanupGuard::new();
    let ckpt = dir.join("geometry.json");
    guard.track(&ckpt);
    model.save(&ckpt)?;
    let curve = dir.join("geometry_curve.txt");
    guard.track(&curve);
    write_curve(&curve, &report.curve)?;
    let png = dir.join("geometry_curve.png");
    guard.track(&png);
    plot_curves(&png, &[("train", &report.curve)], 480, 300)?;
    guard.disarm();
    println!(
        "trained geometric prior on {} windows; final loss {:.6}{}",
        train.len(),
        report.curve.last().map(|(_, l)| *l).unwrap_or(f64::NAN),
        report.val_loss.map(|v| format!(", val {v:.6}")).unwrap_or_default()
    );
    Ok(())
}

fn load_models(cfg: &RunConfig) -> Result<(AssessModel, GeometryModel)> {
    let dir = models_dir(cfg);
    let assess = AssessModel::load(&dir.join("assess.json"))?;
    let geometry = GeometryModel::load(&dir.join("geometry.json"))?;
    Ok((assess, geometry))
}

pub fn cmd_annotate(cfg: &RunConfig, video: &Path) -> Result<()> {
    let seq = load_seq(cfg, video)?;
    let (assess, geometry) = load_models(cfg)?;
    let oracle = SyntheticMaskOracle::new(seq.gt.clone(), cfg.infer.distractors, cfg.infer.mask_noise, cfg.run.seed);
    let inputs = VideoInputs { meta: &seq.meta, anchors: &seq.anchors, fwd: &seq.fwd, bwd: &seq.bwd };
    let models = Models {
        assess: &assess,
        geometry: Some(&geometry),
        mask_predictor: Some(&oracle),
        render_frame: None,
        crop_res: 0,
    };
    let icfg = cfg.infer.to_inference_config();
    let records = annotate_video(&inputs, &models, &icfg, RefineMode::VisualGeometry)?;

    let dir = cfg.run.out_dir.join("annotate");
    mkdirs(&dir)?;
    let mut guard = CleanupGuard::new();
    let out = dir.join(format!("{}.csv", seq.name));
    guard.track(&out);
    write_annotations(&records, &seq.meta, &out)?;
    let failures: Vec<String> = records
        .iter()
        .filter(|r| r.source == Source::Failure)
        .map(|r| r.frame_idx.to_string())
        .collect();
    let fail_path = dir.join(format!("{}_failures.txt", seq.name));
    guard.track(&fail_path);
    fs::write(&fail_path, failures.join("\n") + "\n").map_err(|e| Error::io(&fail_path, e))?;
    guard.disarm();
    println!("{}: {} records, {} failures flagged", seq.name, records.len(), failures.len());
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, video: &Path) -> Result<()> {
    let seq = load_seq(cfg, video)?;
    let ann_path = cfg.run.out_dir.join("annotate").join(format!("{}.csv", seq.name));
    let (records, _) = read_annotations(&ann_path)?;
    let report = evaluate(&records, &seq.gt, &DEFAULT_ACC_THRESHOLDS)?;
    let text = report.to_text();
    let dir = cfg.run.out_dir.join("eval");
    mkdirs(&dir)?;
    let mut guard = CleanupGuard::new();
    let out = dir.join(format!("{}.txt", seq.name));
    guard.track(&out);
    fs::write(&out, &text).map_err(|e| Error::io(&out, e))?;
    guard.disarm();
    print!("{text}");
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let seqs = load_all_seqs(cfg)?;
    let (assess, geometry) = load_models(cfg)?;
    let icfg = cfg.infer.to_inference_config();
    let mut evals = Vec::with_capacity(seqs.len());
    for s in &seqs {
        let oracle = SyntheticMaskOracle::new(s.gt.clone(), cfg.infer.distractors, cfg.infer.mask_noise, cfg.run.seed);
        let inputs = VideoInputs { meta: &s.meta, anchors: &s.anchors, fwd: &s.fwd, bwd: &s.bwd };
        let models = Models {
            assess: &assess,
            geometry: Some(&geometry),
            mask_predictor: Some(&oracle),
            render_frame: None,
            crop_res: 0,
        };
        let inters = compute_intermediates(&inputs, &models, &icfg)?;
        evals.push(SequenceEval {
            inters,
            gt: s.gt.clone(),
            frame_count: s.meta.frame_count,
            anchor_count: s.anchors.len(),
        });
    }
    let rows = ablation_reports(&evals, &icfg, &DEFAULT_ACC_THRESHOLDS)?;
    let table = format_ablation(&rows);
    let dir = cfg.run.out_dir.join("report");
    mkdirs(&dir)?;
    let mut guard = CleanupGuard::new();
    let out = dir.join("ablation.txt");
    guard.track(&out);
    fs::write(&out, &table).map_err(|e| Error::io(&out, e))?;
    guard.disarm();
    print!("{table}");
    Ok(())
}
