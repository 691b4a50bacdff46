//! Directional ablation on synthetic scenes.
//!
//! `cargo run --release --example ablation -- [iters] [seeds] [train] [test]`

use sanet::ablation::{run_ablation, AblationConfig, Variant};
use sanet::par::Exec;
use sanet::training::TrainConfig;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let arg = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let cfg = AblationConfig {
        train_scenes: arg(2, 200),
        test_scenes: arg(3, 50),
        seeds: (0..arg(1, 3) as u64).collect(),
        train: TrainConfig {
            max_iter: arg(0, 2000),
            ..TrainConfig::default()
        },
        ..AblationConfig::default()
    };
    let variants = [Variant::Baseline, Variant::VH, Variant::Msc];
    let report = run_ablation(&cfg, &variants, Exec::default(), |r| {
        println!(
            "seed {} {:<10} mIoU {:.4} mF1 {:.4} loss {:.4} ({:.0} s)",
            r.seed,
            r.variant.name(),
            r.mean_iou,
            r.mean_f1,
            r.final_loss,
            r.seconds
        )
    })?;
    println!("{}", serde_json::to_string_pretty(&report.summary())?);
    Ok(())
}
