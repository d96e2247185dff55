//! End-to-end integration: synthesis through persistence, scoring and the
//! harness, with the independent re-computation oracles the pair matrix is
//! checked against.

use std::collections::BTreeMap;

use proxeval_core::eval::{score_eval1, score_eval2, sweep, PairLabel};
use proxeval_core::harness::{
    live::LiveChannel, FaultKind, FaultSchedule, Harness, HarnessError, OutcomeStatus,
};
use proxeval_core::preprocess::preprocess_pair;
use proxeval_core::similarity::{mae, pearson, SimilarityMetric};
use proxeval_core::store::{FileFormat, RecordStore};
use proxeval_core::synth::{generate_dataset, presets};
use proxeval_core::trace::{DeviceRole, SensorKind, TransactionTriple};

fn by_sensor(triples: Vec<TransactionTriple>) -> BTreeMap<SensorKind, Vec<TransactionTriple>> {
    let mut map: BTreeMap<SensorKind, Vec<TransactionTriple>> = BTreeMap::new();
    for t in triples {
        map.entry(t.sensor).or_default().push(t);
    }
    map
}

// The all-pairs scoring takes a shortcut (scalarizing each trace once);
// this recomputes every cell of a 5 x 5 matrix through the plain
// per-pair pipeline and demands bit-identical scores.
#[test]
fn eval1_matches_direct_nested_loop() {
    let triples = &by_sensor(generate_dataset(&presets::paper_like(5, 1312)).unwrap())
        [&SensorKind::MagneticField];
    for metric in SimilarityMetric::ALL {
        let set = score_eval1(triples, metric).unwrap();
        let mut idx = 0;
        for ti_triple in triples.iter() {
            for tt_triple in triples.iter() {
                let (u, v) = preprocess_pair(&ti_triple.ti, &tt_triple.tt).unwrap();
                let want = match metric {
                    SimilarityMetric::Mae => mae(&u, &v).unwrap().value,
                    SimilarityMetric::Pearson => pearson(&u, &v).unwrap().value,
                };
                let got = &set.pairs[idx];
                assert_eq!(got.score.value, want, "cell {idx} under {metric}");
                let expected_label = if ti_triple.transaction_id == tt_triple.transaction_id {
                    PairLabel::GenuineMatch
                } else {
                    PairLabel::NonMatch
                };
                assert_eq!(got.label, expected_label);
                idx += 1;
            }
        }
        assert_eq!(idx, set.pairs.len() + set.exclusions.len());
    }
}

// Relay MAE scores sit stochastically above genuine ones under the
// paper-like defaults (fixed seed, exact AUC over all genuine x relay
// pairs).
#[test]
fn relay_scores_dominate_genuine_under_mae() {
    let grouped = by_sensor(generate_dataset(&presets::paper_like(300, 7212)).unwrap());
    for sensor in SensorKind::ALL {
        let set = score_eval2(&grouped[&sensor], SimilarityMetric::Mae).unwrap();
        let genuine: Vec<f64> = set
            .pairs
            .iter()
            .filter(|p| p.label == PairLabel::GenuineMatch)
            .map(|p| p.score.value)
            .collect();
        let relay: Vec<f64> = set
            .pairs
            .iter()
            .filter(|p| p.label == PairLabel::RelayPair)
            .map(|p| p.score.value)
            .collect();
        let mut wins = 0u64;
        for &g in &genuine {
            for &r in &relay {
                if r > g {
                    wins += 1;
                }
            }
        }
        let auc = wins as f64 / (genuine.len() * relay.len()) as f64;
        assert!(
            auc > 0.5,
            "{sensor}: relay MAE not stochastically larger (AUC {auc:.3})"
        );
    }
}

#[test]
fn synth_store_save_load_round_trip() {
    let triples = generate_dataset(&presets::paper_like(6, 99)).unwrap();
    let mut store = RecordStore::new();
    for t in &triples {
        store.append_triple(t).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    store.save(dir.path()).unwrap();
    let loaded = RecordStore::load(dir.path()).unwrap();
    for sensor in SensorKind::ALL {
        assert_eq!(
            loaded.join_triples(sensor),
            store.join_triples(sensor),
            "{sensor}"
        );
        assert_eq!(loaded.join_triples(sensor).len(), 6);
    }
    // Byte-identical determinism: regenerating and re-saving produces the
    // same files.
    let triples2 = generate_dataset(&presets::paper_like(6, 99)).unwrap();
    let mut store2 = RecordStore::new();
    for t in &triples2 {
        store2.append_triple(t).unwrap();
    }
    let dir2 = tempfile::tempdir().unwrap();
    store2.save(dir2.path()).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let entry = entry.unwrap();
        let a = std::fs::read(entry.path()).unwrap();
        let b = std::fs::read(dir2.path().join(entry.file_name())).unwrap();
        assert_eq!(a, b, "{:?} differs between identical runs", entry.file_name());
    }
}

// The JSONL row schema is an external interface; its field names are
// pinned.
#[test]
fn jsonl_schema_field_names_are_stable() {
    let triples = generate_dataset(&presets::paper_like(1, 5)).unwrap();
    let mut store = RecordStore::new();
    // One scalar sensor and one vector sensor.
    for t in &triples {
        if matches!(t.sensor, SensorKind::Light | SensorKind::Gravity) {
            store.append_triple(t).unwrap();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.jsonl");
    store.export_jsonl(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6);
    for line in text.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec![
                "location",
                "role",
                "samples",
                "sensor",
                "start_epoch_ms",
                "transaction_id"
            ]
        );
        let id = obj["transaction_id"].as_str().unwrap();
        assert_eq!(id.len(), 14);
        assert!(id.chars().all(|c| c.is_ascii_hexdigit() && !c.is_uppercase()));
        assert!(["TT", "TI", "DTI"].contains(&obj["role"].as_str().unwrap()));
        let samples = obj["samples"].as_array().unwrap();
        let sample = samples[0].as_object().unwrap();
        let mut sample_keys: Vec<&str> = sample.keys().map(String::as_str).collect();
        sample_keys.sort_unstable();
        match obj["sensor"].as_str().unwrap() {
            "Light" => assert_eq!(sample_keys, vec!["t_ms", "v"]),
            _ => assert_eq!(sample_keys, vec!["t_ms", "x", "y", "z"]),
        }
    }

    // Re-ingesting the export reproduces the joinable dataset.
    let mut reloaded = RecordStore::new();
    reloaded.ingest(&path, FileFormat::Jsonl).unwrap();
    for sensor in [SensorKind::Light, SensorKind::Gravity] {
        assert_eq!(reloaded.join_triples(sensor), store.join_triples(sensor));
    }
}

#[test]
fn harness_recording_window_and_store_bound() {
    let mut scenario = presets::paper_like(4, 55);
    scenario.recording_ms = 350.0;
    let sensors: Vec<SensorKind> = scenario.sensors.iter().copied().collect();
    let mut harness = Harness::new_emulated(scenario).unwrap();
    harness
        .run_session(&sensors, 4, &FaultSchedule::empty())
        .unwrap();
    for sensor in SensorKind::ALL {
        for role in DeviceRole::ALL {
            for row in harness.store().rows(sensor, role) {
                assert!(row.trace.max_t_ms().unwrap() < 350.0);
            }
        }
    }
}

#[test]
fn live_bind_conflict_is_bind_error() {
    let first = LiveChannel::bind(19671).unwrap();
    match LiveChannel::bind(19671) {
        Err(HarnessError::Bind { port, .. }) => assert_eq!(port, 19671),
        Err(other) => panic!("expected BindError, got {other:?}"),
        Ok(_) => panic!("second bind on the same port should fail"),
    }
    drop(first);
    // Port is free again after the handle drops.
    LiveChannel::bind(19671).unwrap();
}

#[test]
fn live_corrupt_datagram_discards_and_continues() {
    let scenario = presets::paper_like(3, 808);
    let mut harness = Harness::new_live(scenario, 19672).unwrap();
    let outcome = harness
        .run_transaction(SensorKind::Light, Some(FaultKind::CorruptDtiPayload))
        .unwrap();
    assert_eq!(outcome.status, OutcomeStatus::DiscardedIncomplete);
    // The session continues: the next transaction stores normally.
    let outcome = harness.run_transaction(SensorKind::Light, None).unwrap();
    assert_eq!(outcome.status, OutcomeStatus::Stored);
    assert_eq!(harness.store().join_triples(SensorKind::Light).len(), 1);
}

// Distant-device decorrelation, measured with the pipeline's own Pearson
// implementation over 200 transactions.
//
// Step-event latents integrate their events, so two independent zero-noise
// paths keep the spurious correlation of random walks (mean |corr| ~ 0.45
// here, for any rate or magnitude); the signed mean still vanishes and the
// shared-latent control sits near 1. Once observation noise dominates the
// profile, independent latents fall under |corr| 0.2.
#[test]
fn different_latent_decorrelates_relay_pairs() {
    let light = |scenario: &mut proxeval_core::synth::SynthScenario| {
        scenario.sensors = [SensorKind::Light].into_iter().collect();
    };
    let corr_stats = |scenario: &proxeval_core::synth::SynthScenario, label: PairLabel| {
        let triples = generate_dataset(scenario).unwrap();
        let set = score_eval2(&triples, SimilarityMetric::Pearson).unwrap();
        let vals: Vec<f64> = set
            .pairs
            .iter()
            .filter(|p| p.label == label)
            .map(|p| p.score.value)
            .collect();
        assert_eq!(vals.len(), 200);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let mean_abs = vals.iter().map(|v| v.abs()).sum::<f64>() / vals.len() as f64;
        (mean, mean_abs)
    };

    // Literal zero-noise case: unbiased but with the random-walk floor.
    let mut zero_noise = presets::separable(200, 777);
    light(&mut zero_noise);
    let (mean, mean_abs) = corr_stats(&zero_noise, PairLabel::RelayPair);
    assert!(mean.abs() < 0.1, "signed mean corr {mean}");
    assert!(mean_abs < 0.6, "mean |corr| {mean_abs}");

    // Shared-latent control under the same profiles.
    let mut shared = presets::separable(200, 778);
    light(&mut shared);
    let (genuine_mean, _) = corr_stats(&shared, PairLabel::GenuineMatch);
    assert!(genuine_mean > 0.95, "shared-latent corr {genuine_mean}");

    // Noise-dominated profiles: independent latents drop under 0.2.
    let mut noisy = presets::paper_like(200, 779);
    noisy.dti_distance_mode = proxeval_core::synth::DtiDistanceMode::DifferentLatent;
    light(&mut noisy);
    for loc in &mut noisy.locations {
        let p = loc.sensors.get_mut(&SensorKind::Light).unwrap();
        p.event_rate = 0.4;
        p.drift_rate = 1.0;
        p.observation_noise_sigma = 8.0;
    }
    let (_, noisy_mean_abs) = corr_stats(&noisy, PairLabel::RelayPair);
    assert!(noisy_mean_abs < 0.2, "mean |corr| {noisy_mean_abs}");
}

// A distant device that duplicates TI scores identically to the genuine
// pair, transaction by transaction.
#[test]
fn duplicate_relay_scores_equal_genuine() {
    let grouped = by_sensor(generate_dataset(&presets::duplicate_relay(30, 17)).unwrap());
    for metric in SimilarityMetric::ALL {
        let set = score_eval2(&grouped[&SensorKind::Gravity], metric).unwrap();
        for chunk in set.pairs.chunks(2) {
            let [genuine, relay] = chunk else {
                panic!("pairs come in genuine/relay pairs")
            };
            assert_eq!(genuine.label, PairLabel::GenuineMatch);
            assert_eq!(relay.label, PairLabel::RelayPair);
            assert_eq!(genuine.score.value, relay.score.value);
        }
    }
}

// Same-distribution positives and negatives land at an EER of one half.
#[test]
fn sweep_same_distribution_gives_half_eer() {
    use proxeval_core::preprocess::SeriesOrigin;
    use proxeval_core::similarity::SimilarityScore;
    use proxeval_core::trace::TransactionId;
    use rand::{Rng, SeedableRng};

    let origin = SeriesOrigin {
        transaction_id: TransactionId::new([0; 7]),
        role: DeviceRole::Tt,
        sensor: SensorKind::Light,
    };
    for seed in 0..20u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4000 + seed);
        let mut draw = || -> f64 {
            // Same lognormal-ish distribution for both classes.
            let u: f64 = rng.random_range(-1.0..1.0);
            (u * 1.3).exp()
        };
        let scored: Vec<proxeval_core::eval::ScoredPair> = (0..2000)
            .map(|k| proxeval_core::eval::ScoredPair {
                score: SimilarityScore {
                    metric: SimilarityMetric::Mae,
                    value: draw(),
                    a: origin,
                    b: origin,
                },
                label: if k % 2 == 0 {
                    PairLabel::GenuineMatch
                } else {
                    PairLabel::NonMatch
                },
            })
            .collect();
        let result = sweep(&scored, SimilarityMetric::Mae).unwrap();
        assert!(
            (result.eer - 0.5).abs() <= 0.05,
            "seed {seed}: EER {}",
            result.eer
        );
    }
}

// Generation and the pair matrix are independent of rayon worker count.
#[test]
fn results_do_not_depend_on_worker_count() {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let scenario = presets::paper_like(6, 12);
    let parallel = generate_dataset(&scenario).unwrap();
    let serial = single.install(|| generate_dataset(&scenario).unwrap());
    assert_eq!(parallel, serial);

    let triples = &by_sensor(parallel)[&SensorKind::Light];
    let set_par = score_eval1(triples, SimilarityMetric::Mae).unwrap();
    let set_ser = single.install(|| score_eval1(triples, SimilarityMetric::Mae).unwrap());
    assert_eq!(set_par, set_ser);
}

// The paper's per-sensor volume: a fault-free 1000-transaction session
// joins to 1000 triples.
#[test]
fn session_of_one_thousand_join_complete() {
    let mut scenario = presets::paper_like(1000, 64);
    scenario.sensors = [SensorKind::Gyroscope].into_iter().collect();
    let mut harness = Harness::new_emulated(scenario).unwrap();
    let summary = harness
        .run_session(&[SensorKind::Gyroscope], 1000, &FaultSchedule::empty())
        .unwrap();
    assert_eq!(summary.attempted, 1000);
    assert_eq!(summary.stored, 1000);
    assert_eq!(harness.store().join_triples(SensorKind::Gyroscope).len(), 1000);
}

// The sweep summary rows survive the CSV round trip exactly.
#[test]
fn summary_csv_round_trip() {
    let grouped = by_sensor(generate_dataset(&presets::paper_like(20, 3)).unwrap());
    let mut rows = Vec::new();
    for sensor in [SensorKind::Light, SensorKind::Gyroscope] {
        for metric in SimilarityMetric::ALL {
            let set = score_eval2(&grouped[&sensor], metric).unwrap();
            let r = sweep(&set.pairs, metric).unwrap();
            rows.push(proxeval_core::eval::SummaryRow {
                sensor: sensor.canonical_name().to_string(),
                metric,
                optimum_threshold: r.optimum_threshold,
                eer: r.eer,
                counts: r.counts_at_optimum,
            });
        }
    }
    let mut buf = Vec::new();
    proxeval_core::eval::write_summary_csv(&rows, &mut buf).unwrap();
    let parsed = proxeval_core::eval::parse_summary_csv(&String::from_utf8(buf).unwrap()).unwrap();
    assert_eq!(parsed, rows);
}
