//! Parameter budgets and tensor geometry of every network.

use oneshot_core::analysis::ModelKind;
use oneshot_models::backbone::{Backbone, BackboneSpec};
use oneshot_models::dagan::DaGanConfig;
use oneshot_models::generator::{GeneratorConfig, GeneratorModel};
use oneshot_models::layers::BnMode;
use oneshot_models::maml::{MamlConfig, MetaClassifier};
use oneshot_models::tensor::trainable_count;
use oneshot_models::vae_stn::{Readout, VaeStn, VaeStnConfig};
use tch::{Device, Kind, Tensor};

/// Four conv3x3 blocks with batch norm, then two linear layers.
fn backbone_oracle(c: i64, blocks: i64, flat: i64, tap: i64, out: i64) -> i64 {
    let mut n = 0;
    let mut input = 1;
    for _ in 0..blocks {
        n += input * c * 9 + c + 2 * c;
        input = c;
    }
    n + flat * tap + tap + tap * out + out
}

fn within(actual: usize, target: f64, tol: f64) -> bool {
    ((actual as f64 - target) / target).abs() <= tol
}

#[test]
fn backbone_has_exact_budget() {
    let b = Backbone::new(BackboneSpec::default(), Device::Cpu, 0).unwrap();
    assert_eq!(b.param_count(), 292_544);
    assert_eq!(b.param_count() as i64, backbone_oracle(64, 4, 576, 256, 128));
    assert_eq!(b.param_count(), trainable_count(b.var_store()));
}

#[test]
fn backbone_shapes() {
    let b = Backbone::new(BackboneSpec::default(), Device::Cpu, 0).unwrap();
    let x = Tensor::zeros([3, 1, 50, 50], (Kind::Float, Device::Cpu));
    let out = b.forward(&x, BnMode::Eval);
    assert_eq!(out.tap.size(), vec![3, 256]);
    assert_eq!(out.out.size(), vec![3, 128]);
}

#[test]
fn maml_shares_the_trunk_budget() {
    let cfg = MamlConfig::default();
    let m = MetaClassifier::new(BackboneSpec::default(), cfg.clone(), Device::Cpu, 0).unwrap();
    let trunk = backbone_oracle(64, 4, 576, 256, 0) as usize;
    assert_eq!(m.param_count(), trunk + 256 * cfg.ways + cfg.ways);
}

#[test]
fn vae_stn_budget_matches_closed_form() {
    let cfg = VaeStnConfig::default();
    let m = VaeStn::new(cfg.clone(), Device::Cpu, 0).unwrap();
    assert_eq!(trainable_count(m.var_store()) as i64, cfg.param_count());
    assert_eq!(cfg.param_count(), 5_743_847);
    assert!(within(cfg.param_count() as usize, 6.2e6, 0.10));
    let hidden = VaeStnConfig {
        readout: Readout::Hidden,
        ..VaeStnConfig::default()
    };
    assert!(hidden.param_count() < cfg.param_count());
}

#[test]
fn generator_budgets_within_ten_percent() {
    let targets = [
        (ModelKind::VaeStn, 6.2e6),
        (ModelKind::VaeNs, 7.48e6),
        (ModelKind::DaganUn, 6.8e6),
        (ModelKind::DaganRn, 6.8e6),
    ];
    for (kind, target) in targets {
        let g = GeneratorModel::new(GeneratorConfig::base(kind), Device::Cpu, 0).unwrap();
        let n = g.param_count();
        assert!(within(n, target, 0.10), "{}: {n} vs {target}", kind.as_str());
    }
}

#[test]
fn dagan_variants_reject_mismatched_skips() {
    assert!(GeneratorConfig::DaganUn(DaGanConfig::resnet()).validate().is_err());
    assert!(GeneratorConfig::DaganRn(DaGanConfig::unet()).validate().is_err());
}

#[test]
fn attention_steps_range_is_enforced() {
    for steps in [19, 91] {
        let cfg = VaeStnConfig {
            attention_steps: steps,
            ..VaeStnConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
    assert!(VaeStnConfig { attention_steps: 20, ..VaeStnConfig::default() }.validate().is_ok());
}
