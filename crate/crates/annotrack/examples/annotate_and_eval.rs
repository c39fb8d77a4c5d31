//! Run the whole pipeline on one synthetic sequence: train a small quality
//! scorer, pick per-frame between forward and backward trackers, flag
//! failures, refine with oracle masks plus the geometric prior, and compare
//! the result against ground truth.

use annotrack::assess::{train_assess, AssessConfig, AssessModel, TrainConfig};
use annotrack::infer::{annotate_video, InferenceConfig, Models, RefineMode, VideoInputs};
use annotrack::metrics::{evaluate, QualityMapParams};
use annotrack::nn::PredictorKind;
use annotrack::refine::{train_refine, AggOp, GeometryConfig, GeometryModel, SyntheticMaskOracle};
use annotrack::store::Source;
use annotrack::synth::{assess_samples, generate_sequence, refine_samples, SynthConfig};

fn main() -> annotrack::Result<()> {
    // Train on a handful of sequences, annotate a fresh one.
    let make = |seed: u64, id: &str| SynthConfig {
        seed,
        video_id: id.to_string(),
        frame_count: 301,
        map_side: 16,
        ..SynthConfig::default()
    };
    let qp = QualityMapParams::default();
    let mut train = Vec::new();
    let mut geo_train = Vec::new();
    let gcfg = GeometryConfig {
        feature_dim: 16,
        hidden: 32,
        window_len: 20,
        map_side: 16,
        mask_rows: 32,
        mask_cols: 32,
        kind: PredictorKind::Lstm,
        seed: 9,
    };
    let mut meta = None;
    for i in 0..3u64 {
        let seq = generate_sequence(&make(50 + i, &format!("tr{i}")))?;
        train.extend(assess_samples(&seq, 20, 10, &qp)?);
        let oracle = SyntheticMaskOracle::new(seq.gt.clone(), 2, 0.005, 5);
        geo_train.extend(refine_samples(&seq, &gcfg, &oracle, 10)?);
        meta.get_or_insert(seq.meta);
    }
    let meta = meta.unwrap();

    let acfg = AssessConfig {
        feature_dim: 16,
        hidden: 32,
        window_len: 20,
        map_side: 16,
        kind: PredictorKind::Lstm,
        seed: 7,
    };
    let mut assess = AssessModel::new(acfg);
    train_assess(&mut assess, &train, &[], &meta, &TrainConfig { lr: 2e-3, batch_size: 16, epochs: 20, seed: 1 })?;
    let mut geometry = GeometryModel::new(gcfg);
    train_refine(&mut geometry, &geo_train, &[], &meta, AggOp::RectifiedClip, &TrainConfig { lr: 3e-3, batch_size: 8, epochs: 6, seed: 2 })?;

    let seq = generate_sequence(&make(99, "eval"))?;
    let oracle = SyntheticMaskOracle::new(seq.gt.clone(), 2, 0.005, 5);
    let inputs = VideoInputs { meta: &seq.meta, anchors: &seq.anchors, fwd: &seq.fwd, bwd: &seq.bwd };
    let models = Models {
        assess: &assess,
        geometry: Some(&geometry),
        mask_predictor: Some(&oracle),
        render_frame: None,
        crop_res: 0,
    };
    let cfg = InferenceConfig::default();
    let records = annotate_video(&inputs, &models, &cfg, RefineMode::VisualGeometry)?;

    let count = |s: Source| records.iter().filter(|r| r.source == s).count();
    println!(
        "{} frames: {} manual, {} forward, {} backward, {} flagged",
        records.len(),
        count(Source::Manual),
        count(Source::Forward),
        count(Source::Backward),
        count(Source::Failure)
    );
    let report = evaluate(&records, &seq.gt, &[0.5, 0.7])?;
    println!("{}", report.to_text());
    Ok(())
}
