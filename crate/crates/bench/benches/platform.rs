use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use vas_core::bench::{run_scenario, Scenario, ScenarioKind};
use vas_core::crypto::Identity;
use vas_core::link::{LinkProfile, TransportModel};
use vas_core::payments::{PaymentSession, Tariff};
use vas_core::siem::{analyze_logs, default_rules, generate_synthetic_logs, SyntheticLogConfig};
use vas_core::wire::{Frame, MsgType};

fn frame_codec(c: &mut Criterion) {
    let frame = Frame::new(MsgType::VasData, vec![7u8; 1000]);
    let bytes = frame.encode().unwrap();
    c.bench_function("frame_encode_1k", |b| b.iter(|| black_box(&frame).encode().unwrap()));
    c.bench_function("frame_decode_1k", |b| b.iter(|| Frame::decode(black_box(&bytes)).unwrap()));
}

fn payment_burst(c: &mut Criterion) {
    let charger = Identity::from_seed("charger", [1; 32]);
    let vehicle = Identity::from_seed("vehicle", [2; 32]);
    let tariff = Tariff::new(3, 5).unwrap();
    let fresh = || {
        let ours = PaymentSession::new([9; 16], tariff, charger.verifying_key(), vehicle.verifying_key());
        let theirs = PaymentSession::new([9; 16], tariff, charger.verifying_key(), vehicle.verifying_key());
        (ours, theirs)
    };
    c.bench_function("payment_burst_round", |b| {
        b.iter_batched(
            fresh,
            |(mut ch, mut ve)| {
                let r = ch.issue_micro_receipt(&charger).unwrap();
                let a = ve.authorize_burst(&vehicle, &r.encode()).unwrap();
                ch.record_authorization(&a.encode()).unwrap();
            },
            BatchSize::SmallInput,
        )
    });
}

fn siem_rules(c: &mut Criterion) {
    let batch = generate_synthetic_logs(&SyntheticLogConfig::new(1, 60, 1 << 20)).unwrap();
    let rules = default_rules();
    c.bench_function("siem_rules_1mib", |b| b.iter(|| analyze_logs(black_box(&batch), &rules).unwrap()));
}

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    for kind in [ScenarioKind::Stability, ScenarioKind::NaivePayment, ScenarioKind::FlPull] {
        let s = Scenario::new(kind, LinkProfile::evolve100(), TransportModel::ideal()).samples(10);
        g.bench_function(kind.as_str(), |b| b.iter(|| run_scenario(black_box(&s)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, frame_codec, payment_burst, siem_rules, scenarios);
criterion_main!(benches);
