//! Build the ablation table over several synthetic sequences: raw trackers,
//! learned direction selection, failure flagging, and mask refinement with
//! and without the geometric prior.

use annotrack::assess::{train_assess, AssessConfig, AssessModel, TrainConfig};
use annotrack::infer::{compute_intermediates, InferenceConfig, Models, VideoInputs};
use annotrack::metrics::QualityMapParams;
use annotrack::nn::PredictorKind;
use annotrack::refine::{train_refine, AggOp, GeometryConfig, GeometryModel, SyntheticMaskOracle};
use annotrack::report::{ablation_reports, format_ablation, SequenceEval};
use annotrack::synth::{assess_samples, generate_sequence, refine_samples, SynthConfig};

fn main() -> annotrack::Result<()> {
    let make = |seed: u64, id: String| SynthConfig {
        seed,
        video_id: id,
        frame_count: 301,
        map_side: 16,
        ..SynthConfig::default()
    };
    let seqs: Vec<_> = (0..6u64)
        .map(|i| generate_sequence(&make(300 + i, format!("abl{i}"))))
        .collect::<annotrack::Result<_>>()?;
    let meta = seqs[0].meta.clone();

    let qp = QualityMapParams::default();
    let mut train = Vec::new();
    for s in &seqs[..3] {
        train.extend(assess_samples(s, 20, 10, &qp)?);
    }
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
    let mut geo_train = Vec::new();
    for s in &seqs[..2] {
        let oracle = SyntheticMaskOracle::new(s.gt.clone(), 2, 0.005, 5);
        geo_train.extend(refine_samples(s, &gcfg, &oracle, 10)?);
    }
    let mut geometry = GeometryModel::new(gcfg);
    train_refine(&mut geometry, &geo_train, &[], &meta, AggOp::RectifiedClip, &TrainConfig { lr: 3e-3, batch_size: 8, epochs: 6, seed: 2 })?;

    let cfg = InferenceConfig::default();
    let mut evals = Vec::new();
    for s in &seqs {
        let oracle = SyntheticMaskOracle::new(s.gt.clone(), 2, 0.005, 5);
        let inputs = VideoInputs { meta: &s.meta, anchors: &s.anchors, fwd: &s.fwd, bwd: &s.bwd };
        let models = Models {
            assess: &assess,
            geometry: Some(&geometry),
            mask_predictor: Some(&oracle),
            render_frame: None,
            crop_res: 0,
        };
        evals.push(SequenceEval {
            inters: compute_intermediates(&inputs, &models, &cfg)?,
            gt: s.gt.clone(),
            frame_count: s.meta.frame_count,
            anchor_count: s.anchors.len(),
        });
    }
    let rows = ablation_reports(&evals, &cfg, &[0.5, 0.7])?;
    println!("{}", format_ablation(&rows));
    Ok(())
}
