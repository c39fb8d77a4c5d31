//! Render a Gaussian attention weight map and save it as a PNG, then verify
//! the three structural properties: unit peak, separability, and the flat
//! map at alpha = 0.

use annotrack::plot::save_mask;
use annotrack::refine::{gaussian_weight_at, gaussian_weight_map, GaussianParams};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let theta = GaussianParams { mu1: 0.4, mu2: 0.55, sigma1: 0.18, sigma2: 0.25, alpha: 1.3 };
    let map = gaussian_weight_map(&theta, 64, 64);

    let out: PathBuf = std::env::var_os("ANNOTRACK_OUT_DIR")
        .map(Into::into)
        .unwrap_or_else(|| PathBuf::from("target/example_out"));
    std::fs::create_dir_all(&out)?;
    let png = out.join("gaussian_weight.png");
    save_mask(&png, &map)?;
    println!("wrote {}", png.display());

    println!("peak W(mu1, mu2)          = {}", gaussian_weight_at(&theta, theta.mu1, theta.mu2));
    let (x, y) = (0.1, 0.9);
    let joint = gaussian_weight_at(&theta, x, y);
    let split = gaussian_weight_at(&theta, x, theta.mu2) * gaussian_weight_at(&theta, theta.mu1, y);
    println!("separability residual     = {:+.2e}", joint - split);
    let flat = GaussianParams { alpha: 0.0, ..theta };
    let map0 = gaussian_weight_map(&flat, 16, 16);
    println!("alpha = 0 map min/max     = {} / {}", map0.iter().cloned().fold(f64::MAX, f64::min), map0.iter().cloned().fold(f64::MIN, f64::max));
    Ok(())
}
