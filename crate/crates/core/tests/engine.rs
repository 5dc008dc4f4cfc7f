use std::collections::BTreeSet;

use healsim_core::datasets::generate_synthetic;
use healsim_core::engine::{
    load_dataset, run_experiment, run_repetition, ExperimentConfig, FaultEvent, RunOptions, TopologyConfig, World,
};
use healsim_core::exec::Exec;
use healsim_core::models::evaluate;
use healsim_core::overlay::NodeId;
use healsim_core::protocols::ProtocolKind;

fn seq() -> RunOptions {
    RunOptions::default()
}

/// Drives a world cycle by cycle like the engine does, checking the
/// accounting identity and returning every id ever seen.
fn drive(cfg: &ExperimentConfig, mut each: impl FnMut(&World)) -> BTreeSet<NodeId> {
    let data = load_dataset(cfg, None).unwrap();
    let mut w = World::build(cfg, &data, 11).unwrap();
    let exec = Exec::Sequential;
    let mut seen: BTreeSet<NodeId> = w.nodes.keys().copied().collect();
    for t in 0..cfg.cycles {
        w.cycle = t;
        w.overlay_step(1, &exec);
        let before = w.live_count();
        let (mut out, mut joined) = (0, 0);
        for ev in cfg.faults.iter().filter(|e| e.applies_at(t)) {
            let to = w.apply_fault_event(ev).unwrap();
            out += to.crashed + to.churned_out;
            joined += to.churned_in;
        }
        assert_eq!(w.live_count(), before - out + joined, "cycle {t}");
        w.protocol_step(&exec).unwrap();
        for &n in w.nodes.keys() {
            seen.insert(n);
        }
        each(&w);
    }
    seen
}

#[test]
fn churn_keeps_live_count_and_never_reuses_ids() {
    let mut cfg = ExperimentConfig::synthetic("churn", ProtocolKind::Heal, 40, 12);
    cfg.faults.push(FaultEvent::Churn {
        start_cycle: 3,
        end_cycle: 8,
        rate: 0.1,
        new_node_degree: 20,
    });
    let mut ids_per_cycle = Vec::new();
    let seen = drive(&cfg, |w| {
        assert_eq!(w.live_count(), 40);
        ids_per_cycle.push(w.nodes.keys().copied().collect::<BTreeSet<_>>());
    });
    // Six churn cycles of ceil(0.1 * 40) = 4 fresh ids each.
    assert_eq!(seen.len(), 40 + 6 * 4);
    for pair in ids_per_cycle.windows(2) {
        let gone: BTreeSet<_> = pair[0].difference(&pair[1]).collect();
        let back: Vec<_> = pair[1].iter().filter(|n| gone.contains(n)).collect();
        assert!(back.is_empty());
    }
}

#[test]
fn crashes_reduce_live_count_exactly() {
    let mut cfg = ExperimentConfig::synthetic("crash", ProtocolKind::Heal, 100, 14);
    cfg.faults = vec![
        FaultEvent::CrashFraction {
            cycle: 4,
            fraction: 0.2,
            include: vec![],
        },
        FaultEvent::CrashHubs { cycle: 8, count: 1 },
        FaultEvent::CrashNodes {
            cycle: 9,
            nodes: vec![NodeId(3), NodeId(3)],
        },
    ];
    let mut live = Vec::new();
    drive(&cfg, |w| live.push(w.live_count()));
    assert_eq!(live[3], 100);
    assert_eq!(live[4], 80);
    assert_eq!(live[8], 79);
    assert!(live[9] == 78 || live[9] == 79);
}

#[test]
fn fedavg_series_freezes_after_server_crash() {
    let mut cfg = ExperimentConfig::synthetic("fa", ProtocolKind::Fedavg, 20, 12);
    cfg.faults.push(FaultEvent::CrashFraction {
        cycle: 5,
        fraction: 0.2,
        include: vec![NodeId(0)],
    });
    let r = run_experiment(&cfg, &seq()).unwrap();
    let acc = r.mean_accuracies();
    assert!(acc[5..].windows(2).all(|w| w[0] == w[1]), "{acc:?}");
    assert!(r.series[0].records[5..].iter().all(|m| m.msgs_sent == 0 && m.live_nodes == 16));
}

#[test]
fn heal_with_one_hub_on_a_star_is_fedavg() {
    let fa = ExperimentConfig::synthetic("fa", ProtocolKind::Fedavg, 10, 20);
    let mut heal = fa.clone();
    heal.protocol = ProtocolKind::Heal;
    heal.topology = Some(TopologyConfig::Star);
    heal.h = 1;
    heal.s = 1;
    let a = run_experiment(&fa, &seq()).unwrap();
    let b = run_experiment(&heal, &seq()).unwrap();
    let bits = |r: &healsim_core::engine::RunResult| -> Vec<u64> { r.mean_accuracies().iter().map(|a| a.to_bits()).collect() };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn accuracy_matches_a_per_node_loop() {
    let cfg = ExperimentConfig::synthetic("g", ProtocolKind::Gossip, 12, 3);
    drive(&cfg, |w| {
        let rec = w.sample_metrics(&Exec::Sequential, false).unwrap();
        let mut total = 0.0;
        for n in w.nodes.values() {
            let hits = w.test.rows().filter(|(x, y)| n.model.predict(x) == *y).count();
            total += hits as f64 / w.test.len() as f64;
        }
        let oracle = total / w.nodes.len() as f64;
        assert!((rec.accuracy - oracle).abs() < 1e-12);
        let via_evaluate: f64 = w.nodes.values().map(|n| evaluate(&n.model, &w.test).unwrap()).sum::<f64>() / w.nodes.len() as f64;
        assert!((rec.accuracy - via_evaluate).abs() < 1e-12);
    });
}

#[test]
fn repetitions_agree_across_worker_counts() {
    for protocol in [ProtocolKind::Heal, ProtocolKind::Gaia, ProtocolKind::Epidemic] {
        let mut cfg = ExperimentConfig::synthetic("d", protocol, 24, 8);
        cfg.repetitions = 3;
        cfg.batch_size = healsim_core::models::BatchSize::Size(8);
        cfg.faults.push(FaultEvent::Churn {
            start_cycle: 2,
            end_cycle: 4,
            rate: 0.1,
            new_node_degree: 6,
        });
        let a = run_experiment(&cfg, &seq()).unwrap();
        let b = run_experiment(
            &cfg,
            &RunOptions {
                exec: Exec::with_jobs(4),
                data_dir: None,
            },
        )
        .unwrap();
        assert_eq!(a, b, "{protocol}");
    }
}

#[test]
fn repetition_is_a_pure_function_of_its_seed() {
    let cfg = ExperimentConfig::synthetic("p", ProtocolKind::Heal, 20, 6);
    let data = generate_synthetic(800, 8, 2, 2.0, 0).unwrap();
    let a = run_repetition(&cfg, &data, 0, 99, &Exec::Sequential).unwrap();
    let b = run_repetition(&cfg, &data, 5, 99, &Exec::with_jobs(2)).unwrap();
    assert_eq!(a.records, b.records);
    let c = run_repetition(&cfg, &data, 0, 100, &Exec::Sequential).unwrap();
    assert_ne!(a.records, c.records);
}
