use maxmargin::certify::{certify_network, theoretical_gamma};
use maxmargin::constructions::{build_cyclic, build_group_trace_for};
use maxmargin::group::GroupKind;
use maxmargin::net::{dataset_margin, Activation, Network};
use maxmargin::spectra::{census, Analysis};
use maxmargin::tasks::{build_dataset, TaskSpec};
use maxmargin::trainer::{train, TrainConfig};

#[test]
fn trained_network_survives_round_trip() {
    let cfg = TrainConfig { steps: 200, eval_every: 100, ..TrainConfig::new(TaskSpec::Modular { p: 7 }, 12, Activation::Square) };
    let (net, trace) = train(&cfg).unwrap();
    assert_eq!(trace.records.first().unwrap().step, 0);
    assert_eq!(trace.last().unwrap().step, 200);
    let back = Network::from_json(&net.to_json().unwrap()).unwrap();
    let data = build_dataset(&net.task).unwrap();
    let a = dataset_margin(&net, &data, 2.0, 3.0).unwrap();
    let b = dataset_margin(&back, &data, 2.0, 3.0).unwrap();
    assert_eq!(a.normalized_margin.to_bits(), b.normalized_margin.to_bits());
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), trace.records.len() + 1);
}

#[test]
fn scaling_keeps_certificate() {
    let net = build_cyclic(11).unwrap().scaled(3.7);
    let data = build_dataset(&net.task).unwrap();
    let r = certify_network(&net, &data, 1e-9).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn trace_network_spectra_are_pure() {
    let net = build_group_trace_for(GroupKind::Symmetric { n: 4 }).unwrap();
    let g = theoretical_gamma(&net.task).unwrap();
    let data = build_dataset(&net.task).unwrap();
    let m = dataset_margin(&net, &data, 2.0, 3.0).unwrap();
    assert!((m.normalized_margin - g.value).abs() < 1e-9 * g.value);
    let group = maxmargin::group::Group::new(GroupKind::Symmetric { n: 4 }).unwrap();
    let reps = maxmargin::group::irreps(&group).unwrap();
    let basis = maxmargin::group::basis_vectors(&reps, &group).unwrap();
    let names = reps.iter().map(|r| r.name.clone()).collect();
    let report = census(&net, &Analysis::Rep { basis: &basis, names }).unwrap();
    assert!((report.mean_max_power - 1.0).abs() < 1e-9);
    assert_eq!(report.counts[0], 0);
}
