//! Finite-difference audit of every hand-derived backward pass.
//!
//! Each block's analytic gradient is compared against central finite
//! differences coordinate by coordinate; the report keeps the worst
//! relative error per tensor. Coordinates where the two probe points land
//! on different sides of a kink (the wkv max branch, a ReLU, an argmax
//! tie) are skipped rather than fudged: a subgradient cannot match a
//! secant across a corner, and counting those as failures would only test
//! the probe width.

use rrwkv::grad::{
    check_channel_mix, check_excited_channel_mix, check_layer_norm, check_model, check_recalibrate,
    check_time_mix, check_wkv, GradReport,
};
use rrwkv::medium::{Mapping, MediumConfig, MediumMode, Pooling};
use rrwkv::model::{Model, ModelConfig, Variant};
use rrwkv::Rng;

fn show(name: &str, report: &GradReport) {
    let worst = report.worst().expect("report has rows");
    println!(
        "{name:<22} worst {:<28} rel err {:.2e}   ({} coords, {} skipped at kinks)",
        worst.parameter, worst.rel_error, report.checked, report.skipped
    );
    assert!(report.passes(1e-4), "{name} failed: {worst:?}");
}

fn main() {
    println!("block-level audits (seed 0, d=6):");
    show("wkv recurrence", &check_wkv(0, 12, 6));
    show("time mix", &check_time_mix(0, 12, 6));
    show("channel mix", &check_channel_mix(0, 12, 6));
    show("layer norm", &check_layer_norm(0, 12, 6));
    show("recalibration gate", &check_recalibrate(0, 6, 4, MediumMode::GateLiteral));
    show("recalibration pool", &check_recalibrate(0, 6, 4, MediumMode::GatedPool));
    show("excited channel mix", &check_excited_channel_mix(0, 14, 6, 4));

    println!("\nwhole models (two layers, every parameter):");
    for variant in [Variant::Rwkv, Variant::Rrwkv] {
        let cfg = ModelConfig::new(
            6,
            2,
            10,
            variant,
            MediumConfig::new(4, 4, 16, Mapping::Causal, MediumMode::GateLiteral, Pooling::Mean),
        );
        let model = Model::init(cfg, &mut Rng::new(3));
        show(&format!("model ({variant})"), &check_model(model, 3, 14));
    }
    println!("\nevery audited gradient is within 1e-4 of its finite difference");
}
