use chargetime::features::training_rows;
use chargetime::gbm::{fit_scaled, GbmConfig, TreeEnsemble};
use chargetime::orchestrator::{
    stage_for, HybridPredictor, IngestEvent, OrchestratorConfig, Provenance, Stage,
};
use chargetime::physics::{ChargingScenario, VehicleSpec};
use chargetime::rl::{nearest_action, DqnAgent, DqnConfig, N_ACTIONS};
use chargetime::simulator::{
    generate_dataset, DatasetRanges, SessionTrace, SimulatorConfig, VehicleCatalog,
};
use chargetime::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn traces(n: usize) -> Vec<SessionTrace> {
    generate_dataset(
        n,
        &SimulatorConfig::default(),
        &VehicleCatalog::default(),
        &DatasetRanges::default(),
    )
    .unwrap()
    .sessions
    .into_iter()
    .map(|s| s.trace)
    .collect()
}

fn ensemble(traces: &[SessionTrace]) -> TreeEnsemble {
    let (x, y) = training_rows(traces, 10);
    fit_scaled(
        &x,
        &y,
        &GbmConfig {
            m_trees: 30,
            max_depth: 5,
            learning_rate: 0.2,
            ..GbmConfig::default()
        },
    )
    .unwrap()
}

fn small_config() -> OrchestratorConfig {
    OrchestratorConfig {
        kickoff_episodes: 4,
        dqn: DqnConfig {
            hidden: vec![16, 16, 8],
            init_buffer: 100,
            batch_size: 16,
            buffer_capacity: 5000,
            ..DqnConfig::default()
        },
        ..OrchestratorConfig::default()
    }
}

fn mid_scenario() -> ChargingScenario {
    ChargingScenario {
        s_ini: 0.3,
        s_final: 0.8,
        p_station: 100.0,
        soh: 0.9,
        t_amb: 20.0,
        vehicle: VehicleSpec::new(75.0, 150.0, 400.0, 250.0),
    }
}

/// Agent whose greedy action is `index` everywhere.
fn constant_agent(index: usize) -> DqnAgent {
    let mut agent = DqnAgent::new(small_config().dqn).unwrap();
    agent.online.init_output(0.0, -1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let n = agent.online.params.len();
    agent.online.params[n - N_ACTIONS + index] = 0.0;
    agent
}

#[test]
fn ingest_counts_and_envelope() {
    let t = traces(30);
    let mut hp = HybridPredictor::new(ensemble(&t), small_config()).unwrap();
    for (i, tr) in t.iter().take(10).enumerate() {
        assert_eq!(hp.ingest_session(tr).unwrap(), IngestEvent::None);
        assert_eq!(hp.n_samples, i + 1);
    }
    assert_eq!(hp.experience.len(), 10 * 100);
    let env = hp.ood.unwrap();
    for tr in hp.experience.iter() {
        assert!(env.contains(&tr.state) && env.contains(&tr.next_state));
    }
    assert!(hp.agent.is_none());
    assert_eq!(hp.predict(&mid_scenario()).unwrap().provenance, Provenance::Analytical);
}

#[test]
fn threshold_crossings_start_and_continue_training() {
    let t = traces(30);
    let mut hp = HybridPredictor::new(ensemble(&t), small_config()).unwrap();
    for tr in &t[..5] {
        hp.ingest_session(tr).unwrap();
    }
    // Jump the counter to just below each threshold.
    hp.n_samples = 499;
    assert_eq!(hp.stage(), Stage::ColdStart);
    assert_eq!(hp.ingest_session(&t[5]).unwrap(), IngestEvent::TrainingStarted);
    assert_eq!(hp.stage(), Stage::Transition);
    let agent = hp.agent.as_ref().unwrap();
    assert!(agent.buffer.len() >= 100 + 600);
    assert_eq!(hp.episodes_trained, 4);
    assert_eq!(hp.ingest_session(&t[6]).unwrap(), IngestEvent::None);
    hp.n_samples = 1499;
    assert_eq!(hp.ingest_session(&t[7]).unwrap(), IngestEvent::TrainingContinued);
    assert_eq!(hp.stage(), Stage::Dominance);
    assert_eq!(hp.episodes_trained, 8);
}

#[test]
fn stage_never_regresses_while_ingesting() {
    let t = traces(12);
    let cfg = OrchestratorConfig {
        kickoff_episodes: 0,
        ..small_config()
    };
    let mut hp = HybridPredictor::new(ensemble(&t), cfg).unwrap();
    let mut last = hp.stage();
    for tr in t.iter().cycle().take(40) {
        hp.ingest_session(tr).unwrap();
        assert!(hp.stage() >= last);
        assert_eq!(hp.stage(), stage_for(hp.n_samples));
        last = hp.stage();
    }
}

#[test]
fn dominance_routes_to_agent_with_fallback() {
    let t = traces(60);
    let sc = mid_scenario();
    let action = nearest_action(60.0, sc.vehicle.p_max_nom);
    let hp = HybridPredictor::with_agent(ensemble(&t), constant_agent(action), &t, 2000, small_config()).unwrap();
    let p = hp.predict(&sc).unwrap();
    assert_eq!(p.stage, Stage::Dominance);
    assert_eq!(p.provenance, Provenance::Rl, "{} fallback points", p.fallback_points);
    let level = action as f64 * 150.0 / 49.0;
    assert!(p.result.power_profile.iter().all(|&q| (q - level).abs() < 1e-9));

    let mut big = sc;
    big.vehicle.c_bat_nom = 200.0;
    let p = hp.predict(&big).unwrap();
    assert_eq!(p.provenance, Provenance::RlFallback);
    assert_eq!(p.fallback_points, 100);

    // Same inputs, same provenance.
    assert_eq!(hp.predict(&big).unwrap(), p);

    let mut cold = hp.clone();
    cold.n_samples = 100;
    assert_eq!(cold.predict(&sc).unwrap().provenance, Provenance::Analytical);
    let mut missing = hp.clone();
    missing.agent = None;
    assert!(matches!(missing.predict(&sc), Err(Error::Config(_))));
}

#[test]
fn state_directory_roundtrip() {
    let t = traces(20);
    let mut hp = HybridPredictor::new(ensemble(&t), small_config()).unwrap();
    for tr in &t[..8] {
        hp.ingest_session(tr).unwrap();
    }
    hp.train(3).unwrap();
    hp.n_samples = 1600;
    let dir = tempfile::tempdir().unwrap();
    hp.save(dir.path()).unwrap();
    let back = HybridPredictor::load(dir.path()).unwrap();
    assert_eq!(back.n_samples, 1600);
    assert_eq!(back.ood, hp.ood);
    assert_eq!(back.experience, hp.experience);
    assert_eq!(back.sessions, hp.sessions);
    let sc = mid_scenario();
    assert_eq!(back.predict(&sc).unwrap(), hp.predict(&sc).unwrap());
    assert!(HybridPredictor::load(&dir.path().join("absent")).unwrap_err().is_io());
}
