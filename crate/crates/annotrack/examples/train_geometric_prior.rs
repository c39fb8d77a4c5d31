//! Train the Gaussian geometric module with box-only supervision: masks come
//! from a fixed predictor, and the loss compares clipped row/column profiles
//! of the reweighted mask against the box rasterization.

use annotrack::assess::TrainConfig;
use annotrack::nn::PredictorKind;
use annotrack::refine::{train_refine, AggOp, GeometryConfig, GeometryModel, SyntheticMaskOracle};
use annotrack::synth::{generate_sequence, refine_samples, SynthConfig};

fn main() -> annotrack::Result<()> {
    let scfg = SynthConfig { frame_count: 211, map_side: 16, ..SynthConfig::default() };
    let seq = generate_sequence(&scfg)?;
    // Distractor blobs give the Gaussian prior something to suppress.
    let oracle = SyntheticMaskOracle::new(seq.gt.clone(), 2, 0.005, 5);

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
    let samples = refine_samples(&seq, &gcfg, &oracle, 10)?;
    println!("{} training windows", samples.len());

    let mut model = GeometryModel::new(gcfg);
    let tc = TrainConfig { lr: 3e-3, batch_size: 8, epochs: 10, seed: 2 };
    let report = train_refine(&mut model, &samples, &[], &seq.meta, AggOp::RectifiedClip, &tc)?;
    for (step, loss) in report.curve.iter().step_by(report.curve.len() / 10 + 1) {
        println!("step {step:>4}  profile loss {loss:.4}");
    }
    let first = report.curve.first().unwrap().1;
    let last = report.curve.last().unwrap().1;
    println!("loss {first:.4} -> {last:.4}");
    Ok(())
}
