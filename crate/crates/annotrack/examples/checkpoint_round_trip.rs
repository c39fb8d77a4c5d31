//! Save a trained model to a JSON checkpoint and reload it, verifying every
//! parameter survives bit-exactly.

use annotrack::assess::{AssessConfig, AssessModel};
use annotrack::nn::{Parameterized, PredictorKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = AssessConfig {
        feature_dim: 16,
        hidden: 24,
        window_len: 10,
        map_side: 16,
        kind: PredictorKind::Lstm,
        seed: 5,
    };
    let mut model = AssessModel::new(cfg);
    let before = model.flat_params();

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("assess.json");
    model.save(&path)?;
    let mut restored = AssessModel::load(&path)?;
    let after = restored.flat_params();

    let diffs = before
        .iter()
        .zip(&after)
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count();
    println!("{} parameters, {} bit-level differences after round trip", before.len(), diffs);
    assert_eq!(diffs, 0);
    println!("checkpoint at {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    Ok(())
}
