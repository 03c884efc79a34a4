//! Prints the directional margins of the default data-size study:
//! how much the merged baseline's fragility grows with scarce target
//! data, and how the robust learner's degradation compares per
//! perturbation condition. Handy when re-tuning study defaults.
//!
//! Usage: `cargo run --release --example study_margins [n_seeds]`

use droco_core::eval::{data_size_study, StudyConfig};

fn main() {
    let n_seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8);
    let mut study = StudyConfig::default_study();
    study.seeds = (0..n_seeds).collect();

    let t0 = std::time::Instant::now();
    let report = data_size_study(&study).unwrap();
    println!(
        "{} study rows over {} seeds in {:.1?}",
        report.rows.len(),
        n_seeds,
        t0.elapsed()
    );

    let b10 = report
        .mean_degradation("baseline", 0.1, "kinematic", "hard")
        .unwrap();
    let b100 = report
        .mean_degradation("baseline", 1.0, "kinematic", "hard")
        .unwrap();
    println!(
        "[data-size]  baseline hard-kinematic degradation: {b10:.2}% at 10% data vs {b100:.2}% at 100% (margin {:+.2})",
        b10 - b100
    );

    println!("[dominance]  degradation at 10% target data, averaged over seeds:");
    for spec in &study.specs {
        let cond = spec.condition();
        let level = spec.level_or_scale();
        let d = report
            .mean_degradation("droco", 0.1, cond, &level)
            .unwrap();
        let b = report
            .mean_degradation("baseline", 0.1, cond, &level)
            .unwrap();
        println!(
            "  {cond:<11}{level:<6} robust {d:>7.2}%  baseline {b:>7.2}%  margin {:+.2}",
            b - d
        );
    }

    let mean_clean = |alg: &str, frac: f64| {
        let rows: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.algorithm == alg && (r.fraction - frac).abs() < 1e-9)
            .map(|r| r.clean_score)
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    println!(
        "[clean]      robust {:.2} vs baseline {:.2} at 10% data; {:.2} vs {:.2} at 100%",
        mean_clean("droco", 0.1),
        mean_clean("baseline", 0.1),
        mean_clean("droco", 1.0),
        mean_clean("baseline", 1.0)
    );
}
