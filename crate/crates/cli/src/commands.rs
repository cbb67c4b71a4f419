use std::fs;
use std::path::Path;

use chargetime::eval::{
    learning_curve, metrics, metrics_table_csv, power_error_grid, r2_score,
    soh_stratified_eval, training_stability_report, default_soh_bins, Metrics, ReportWriter,
};
use chargetime::features::{feature_category, training_rows, FeatureCategory, FEATURE_NAMES};
use chargetime::gbm::{category_importance, cross_validate, fit_scaled, CvResult, GbmConfig, TreeEnsemble};
use chargetime::orchestrator::{stage_for, HybridPredictor, Provenance};
use chargetime::physics::{ChargingScenario, VehicleSpec};
use chargetime::predictor::{
    analytical_power_model, baseline_power, predict_charging_time,
    PredictionResult,
};
use chargetime::rl::{agent_times, AgentPowerModel, schedule_samples, train_agent, DqnAgent, TrainOptions, TrainingHistory};
use chargetime::simulator::{
    generate_dataset, load_dataset, save_dataset, stratified_split, Dataset, SessionTrace, Split,
    VehicleCatalog,
};
use chargetime::{Error, Result};
use serde::Serialize;

use crate::config::{Layout, RunConfig};
use crate::{ModelKind, PredictArgs};

#[derive(Serialize)]
struct SplitManifest {
    seed: u64,
    fractions: (f64, f64, f64),
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn split_and_save(ds: &Dataset, cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let (train, val, test) = stratified_split(ds, cfg.dataset.split, cfg.dataset.split_seed)?;
    let ids = |d: &Dataset| {
        let mut v: Vec<usize> = d.sessions.iter().map(|s| s.id).collect();
        v.sort_unstable();
        v
    };
    let manifest = SplitManifest {
        seed: cfg.dataset.split_seed,
        fractions: cfg.dataset.split,
        train: ids(&train),
        val: ids(&val),
        test: ids(&test),
    };
    let mut all: Vec<_> = train
        .sessions
        .into_iter()
        .chain(val.sessions)
        .chain(test.sessions)
        .collect();
    all.sort_by_key(|s| s.id);
    let dir = layout.dataset_dir();
    save_dataset(&Dataset { sessions: all }, &dir)?;
    let path = layout.split_manifest();
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!(
        "{} sessions: train {}, val {}, test {} -> {}",
        ds.len(),
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        dir.display()
    );
    Ok(())
}

pub fn generate(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let d = &cfg.dataset;
    let ds = generate_dataset(d.n, &d.simulator, &VehicleCatalog::default(), &d.ranges)?;
    split_and_save(&ds, cfg, layout)
}

pub fn split(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let mut ds = load_dataset(&layout.dataset_dir())?;
    for s in &mut ds.sessions {
        s.split = None;
    }
    split_and_save(&ds, cfg, layout)
}

fn load_split(layout: &Layout, which: Split) -> Result<Vec<SessionTrace>> {
    let ds = load_dataset(&layout.dataset_dir())?;
    let traces: Vec<SessionTrace> = ds
        .sessions
        .into_iter()
        .filter(|s| s.split == Some(which))
        .map(|s| s.trace)
        .collect();
    if traces.is_empty() {
        return Err(Error::Precondition(format!(
            "dataset has no {} sessions; run `generate` or `split` first",
            which.as_str()
        )));
    }
    Ok(traces)
}

fn cv_table_csv(cv: Option<&CvResult>, chosen: &GbmConfig) -> String {
    let mut out = String::from("parameter,value,mean_r2,fold_r2,selected\n");
    let chosen_value = |p: &str| match p {
        "m_trees" => chosen.m_trees as f64,
        "max_depth" => chosen.max_depth as f64,
        "learning_rate" => chosen.learning_rate,
        "min_split" => chosen.min_split as f64,
        _ => f64::NAN,
    };
    match cv {
        Some(cv) => {
            for r in &cv.rows {
                let folds: Vec<String> = r.fold_r2.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.parameter,
                    r.value,
                    r.mean_r2,
                    folds.join(";"),
                    r.value == chosen_value(&r.parameter)
                ));
            }
        }
        None => {
            for p in ["m_trees", "max_depth", "learning_rate", "min_split"] {
                out.push_str(&format!("{},{},,,true\n", p, chosen_value(p)));
            }
        }
    }
    out
}

pub fn train_analytical(cfg: &RunConfig, layout: &Layout, cv: bool) -> Result<()> {
    let train = load_split(layout, Split::Train)?;
    let a = &cfg.analytical;
    let (chosen, cv_result) = if cv {
        let (x, y) = training_rows(&train, a.cv_row_stride);
        let groups: Vec<usize> = train
            .iter()
            .enumerate()
            .flat_map(|(i, t)| std::iter::repeat_n(i, t.len().div_ceil(a.cv_row_stride)))
            .collect();
        eprintln!("cross-validating on {} rows, {} folds", x.len(), a.cv_folds);
        let res = cross_validate(&x, &y, Some(&groups), &a.cv_grid, &a.gbm, a.cv_folds)?;
        (res.best, Some(res))
    } else {
        (a.gbm, None)
    };
    eprintln!(
        "hyperparameters: m_trees {}, max_depth {}, learning_rate {}, min_split {}",
        chosen.m_trees, chosen.max_depth, chosen.learning_rate, chosen.min_split
    );
    let (x, y) = training_rows(&train, a.row_stride);
    let model = fit_scaled(&x, &y, &chosen)?;
    fs::create_dir_all(layout.models_dir()).map_err(|e| Error::io(layout.models_dir(), e))?;
    model.save(&layout.analytical_model())?;
    let table = layout.cv_table();
    fs::write(&table, cv_table_csv(cv_result.as_ref(), &chosen)).map_err(|e| Error::io(&table, e))?;
    println!(
        "analytical model: {} trees on {} rows from {} sessions -> {}",
        model.trees.len(),
        x.len(),
        train.len(),
        layout.analytical_model().display()
    );
    Ok(())
}

fn with_lock<T>(dir: &Path, f: impl FnOnce() -> Result<T>) -> Result<T> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let lock = dir.join(".lock");
    fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&lock)
        .map_err(|e| Error::io(&lock, e))?;
    let out = f();
    fs::remove_file(&lock).map_err(|e| Error::io(&lock, e))?;
    out
}

pub fn train_rl(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let train = load_split(layout, Split::Train)?;
    let analytical = TreeEnsemble::load(&layout.analytical_model())?;
    let val = if cfg.rl.eval_every > 0 {
        let mut v = load_split(layout, Split::Val)?;
        v.truncate(cfg.rl.eval_sessions);
        v
    } else {
        Vec::new()
    };
    let opts = TrainOptions {
        episodes: cfg.rl.episodes,
        simulator: cfg.dataset.simulator,
        eval_sessions: &val,
        eval_every: cfg.rl.eval_every,
        ..TrainOptions::default()
    };
    eprintln!("training on {} sessions for {} episodes", train.len(), opts.episodes);
    let out = train_agent(&train, &analytical, &cfg.rl.dqn, &opts)?;
    let h = &out.history;
    eprintln!("seeded replay buffer with {} transitions", h.seeded);
    let mut stage = None;
    for r in &h.episodes {
        let n = schedule_samples(r.episode - 1, opts.episodes);
        let s = stage_for(n);
        if stage != Some(s) {
            eprintln!("episode {}: stage {:?} at {} samples, epsilon {}", r.episode, s, n, r.epsilon);
            stage = Some(s);
        }
    }
    for e in &h.evals {
        eprintln!("episode {}: validation r2 {:.4}, mape {:.2}%", e.episode, e.r2, e.mape);
    }
    fs::create_dir_all(layout.models_dir()).map_err(|e| Error::io(layout.models_dir(), e))?;
    out.agent.save(&layout.agent())?;
    let csv = layout.history_csv();
    fs::write(&csv, h.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let json = layout.history_json();
    fs::write(&json, serde_json::to_string(h)?).map_err(|e| Error::io(&json, e))?;

    let dir = layout.orchestrator_dir();
    with_lock(&dir, || {
        let hp = HybridPredictor::with_agent(
            analytical.clone(),
            out.agent.clone(),
            &train,
            train.len(),
            cfg.orchestrator_config(),
        )?;
        hp.save(&dir)
    })?;
    println!(
        "agent: {} episodes, {} gradient steps, {} target syncs -> {}",
        h.episodes.len(),
        h.grad_steps,
        h.target_syncs,
        layout.agent().display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictOutput<'a> {
    model: &'a str,
    provenance: &'a str,
    t_c_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    soc_grid: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    power_kw: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    current_a: Option<&'a [f64]>,
}

fn load_hybrid(cfg: &RunConfig, layout: &Layout) -> Result<HybridPredictor> {
    let dir = layout.orchestrator_dir();
    if dir.join("state.json").exists() {
        HybridPredictor::load(&dir)
    } else {
        let analytical = TreeEnsemble::load(&layout.analytical_model())?;
        HybridPredictor::new(analytical, cfg.orchestrator_config())
    }
}

pub fn predict(cfg: &RunConfig, layout: &Layout, args: &PredictArgs) -> Result<()> {
    let scenario = ChargingScenario {
        s_ini: args.s_ini,
        s_final: args.s_final,
        p_station: args.station,
        soh: args.soh,
        t_amb: args.temp,
        vehicle: VehicleSpec::new(args.capacity, args.power, args.voltage, args.cable),
    };
    scenario.validate()?;
    let ic = &cfg.integration;
    let (name, result, provenance): (&str, PredictionResult, &str) = match args.model {
        ModelKind::Linear => {
            let p = baseline_power(&scenario)?;
            ("linear", predict_charging_time(&scenario, &|_| p, ic)?, "linear")
        }
        ModelKind::Analytical => {
            let ens = TreeEnsemble::load(&layout.analytical_model())?;
            let m = analytical_power_model(&ens, &scenario)?;
            ("analytical", predict_charging_time(&scenario, &m, ic)?, Provenance::Analytical.as_str())
        }
        ModelKind::Rl => {
            let agent = DqnAgent::load(&layout.agent())?;
            let m = AgentPowerModel {
                agent: &agent,
                scenario,
            };
            ("rl", predict_charging_time(&scenario, &m, ic)?, Provenance::Rl.as_str())
        }
        ModelKind::Hybrid => {
            let hp = load_hybrid(cfg, layout)?;
            let p = hp.predict(&scenario)?;
            ("hybrid", p.result, p.provenance.as_str())
        }
    };
    let out = PredictOutput {
        model: name,
        provenance,
        t_c_min: result.t_c,
        soc_grid: args.profile.then_some(&result.soc_grid[..]),
        power_kw: args.profile.then_some(&result.power_profile[..]),
        current_a: args.profile.then_some(&result.current_profile[..]),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

/// Charging-time predictions of each available model on one set of traces.
pub struct Predictions {
    pub truth: Vec<f64>,
    pub models: Vec<(&'static str, Vec<f64>)>,
}

fn predict_all(
    traces: &[SessionTrace],
    analytical: &TreeEnsemble,
    agent: Option<&DqnAgent>,
    cfg: &RunConfig,
) -> Result<Predictions> {
    let ic = &cfg.integration;
    let linear = traces
        .iter()
        .map(|t| {
            let p = baseline_power(&t.scenario)?;
            predict_charging_time(&t.scenario, &|_| p, ic).map(|r| r.t_c)
        })
        .collect::<Result<Vec<_>>>()?;
    let ana = traces
        .iter()
        .map(|t| {
            let m = analytical_power_model(analytical, &t.scenario)?;
            predict_charging_time(&t.scenario, &m, ic).map(|r| r.t_c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut models = vec![("linear", linear), ("analytical", ana)];
    if let Some(a) = agent {
        models.push(("rl", agent_times(a, traces)?));
    }
    Ok(Predictions {
        truth: traces.iter().map(|t| t.t_c_true).collect(),
        models,
    })
}

fn load_agent_if_present(layout: &Layout) -> Result<Option<DqnAgent>> {
    let path = layout.agent();
    if path.exists() {
        DqnAgent::load(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn write_evaluation(
    w: &mut ReportWriter,
    test: &[SessionTrace],
    preds: &Predictions,
) -> Result<Vec<(&'static str, Metrics)>> {
    let table = preds
        .models
        .iter()
        .map(|(name, p)| Ok((*name, metrics(&preds.truth, p)?)))
        .collect::<Result<Vec<_>>>()?;
    w.write(
        "model_comparison.csv",
        "test-split metrics per model",
        &metrics_table_csv(&table),
    )?;

    let mut errors = String::from("session,soh,s_ini,s_final,t_true");
    for (name, _) in &preds.models {
        errors.push_str(&format!(",t_{name}"));
    }
    errors.push('\n');
    for (i, t) in test.iter().enumerate() {
        errors.push_str(&format!(
            "{},{},{},{},{}",
            i, t.scenario.soh, t.scenario.s_ini, t.scenario.s_final, t.t_c_true
        ));
        for (_, p) in &preds.models {
            errors.push_str(&format!(",{}", p[i]));
        }
        errors.push('\n');
    }
    w.write(
        "error_distribution.csv",
        "per-session predicted and true charging times",
        &errors,
    )?;

    let mut strata = String::from("model,soh_lo,soh_hi,count,r2,rmse,mae,mape,max_e,mape_growth\n");
    for (name, p) in &preds.models {
        let r = soh_stratified_eval(test, p, &default_soh_bins())?;
        let growth = r.mape_growth.map(|g| g.to_string()).unwrap_or_default();
        for b in &r.bins {
            let m = b
                .metrics
                .map(|m| format!("{},{},{},{},{}", m.r2, m.rmse, m.mae, m.mape, m.max_e))
                .unwrap_or_else(|| ",,,,".into());
            strata.push_str(&format!(
                "{},{},{},{},{},{}\n",
                name, b.bin.lo, b.bin.hi, b.count, m, growth
            ));
        }
    }
    w.write("soh_strata.csv", "metrics per SoH bin and MAPE growth", &strata)?;
    Ok(table)
}

pub fn evaluate(cfg: &RunConfig, layout: &Layout) -> Result<Vec<(&'static str, Metrics)>> {
    let test = load_split(layout, Split::Test)?;
    let analytical = TreeEnsemble::load(&layout.analytical_model())?;
    let agent = load_agent_if_present(layout)?;
    let preds = predict_all(&test, &analytical, agent.as_ref(), cfg)?;
    let mut w = ReportWriter::create(&layout.evaluation_dir())?;
    let table = write_evaluation(&mut w, &test, &preds)?;
    w.finish()?;
    for (name, m) in &table {
        println!(
            "{name:<10} r2 {:.4}  rmse {:.3}  mae {:.3}  mape {:.2}%  max_e {:.2}",
            m.r2, m.rmse, m.mae, m.mape, m.max_e
        );
    }
    Ok(table)
}

fn trajectories_csv(
    test: &[SessionTrace],
    analytical: &TreeEnsemble,
    agent: Option<&DqnAgent>,
    cfg: &RunConfig,
    n: usize,
) -> Result<String> {
    let ic = &cfg.integration;
    let mut out = String::from("session,model,soc,elapsed_min\n");
    let cumulative = |t: &SessionTrace, r: &PredictionResult| {
        let c = t.scenario.limits().map(|l| l.c_bat_eff).unwrap_or(0.0);
        let ds = (t.scenario.s_final - t.scenario.s_ini) / r.power_profile.len() as f64;
        let mut acc = 0.0;
        let mut rows = vec![(t.scenario.s_ini, 0.0)];
        for (s, p) in r.soc_grid.iter().zip(&r.power_profile) {
            acc += 60.0 * c * ds / p;
            rows.push((s + ds, acc));
        }
        rows
    };
    for (i, t) in test.iter().take(n).enumerate() {
        let c = t.scenario.limits()?.c_bat_eff;
        let mut acc = 0.0;
        out.push_str(&format!("{},actual,{},0\n", i, t.soc_grid[0]));
        for k in 1..t.len() {
            acc += 60.0 * c * (t.soc_grid[k] - t.soc_grid[k - 1]) / t.power_kw[k - 1];
            out.push_str(&format!("{},actual,{},{}\n", i, t.soc_grid[k], acc));
        }
        let p = baseline_power(&t.scenario)?;
        let mut results = vec![("linear", predict_charging_time(&t.scenario, &|_| p, ic)?)];
        let m = analytical_power_model(analytical, &t.scenario)?;
        results.push(("analytical", predict_charging_time(&t.scenario, &m, ic)?));
        if let Some(a) = agent {
            let m = AgentPowerModel {
                agent: a,
                scenario: t.scenario,
            };
            results.push(("rl", predict_charging_time(&t.scenario, &m, ic)?));
        }
        for (name, r) in &results {
            for (s, e) in cumulative(t, r) {
                out.push_str(&format!("{i},{name},{s},{e}\n"));
            }
        }
    }
    Ok(out)
}

pub fn report(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let test = load_split(layout, Split::Test)?;
    let train = load_split(layout, Split::Train)?;
    let analytical = TreeEnsemble::load(&layout.analytical_model())?;
    let agent = load_agent_if_present(layout)?;
    let preds = predict_all(&test, &analytical, agent.as_ref(), cfg)?;
    let mut w = ReportWriter::create(&layout.report_dir())?;
    write_evaluation(&mut w, &test, &preds)?;
    w.write(
        "trajectories.csv",
        "cumulative charging time against SoC for sample test sessions",
        &trajectories_csv(&test, &analytical, agent.as_ref(), cfg, 5)?,
    )?;

    let sizes: Vec<usize> = cfg
        .report
        .curve_sizes
        .iter()
        .copied()
        .filter(|&s| s <= train.len())
        .collect();
    if !sizes.is_empty() {
        let gbm = GbmConfig {
            m_trees: cfg.report.curve_trees,
            ..cfg.analytical.gbm
        };
        let stride = cfg.analytical.row_stride;
        let curve = learning_curve(&train, &sizes, cfg.report.curve_runs, gbm.seed, |subset, seed| {
            let (x, y) = training_rows(subset.iter().copied(), stride);
            let ens = fit_scaled(&x, &y, &GbmConfig { seed, ..gbm })?;
            let pred = test
                .iter()
                .map(|t| {
                    let m = analytical_power_model(&ens, &t.scenario)?;
                    predict_charging_time(&t.scenario, &m, &cfg.integration).map(|r| r.t_c)
                })
                .collect::<Result<Vec<_>>>()?;
            r2_score(&preds.truth, &pred)
        })?;
        w.write(
            "learning_curve_analytical.csv",
            "analytical model test R2 against training sessions, mean and 95% interval",
            &curve.to_csv("r2"),
        )?;
    }

    let imp = analytical.feature_importance();
    let mut cats = String::from("category,importance\n");
    for (c, v) in category_importance(&imp) {
        cats.push_str(&format!("{},{}\n", c.as_str(), v));
    }
    w.write("feature_importance.csv", "importance per feature category", &cats)?;
    let mut ranked: Vec<usize> = (0..imp.len()).collect();
    ranked.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
    let mut top = String::from("rank,feature,category,importance\n");
    for (r, &i) in ranked.iter().take(15).enumerate() {
        let cat: FeatureCategory = feature_category(i);
        top.push_str(&format!("{},{},{},{}\n", r + 1, FEATURE_NAMES[i], cat.as_str(), imp[i]));
    }
    w.write("top_features.csv", "fifteen most important individual features", &top)?;

    let history_path = layout.history_json();
    if let (Some(agent), true) = (agent.as_ref(), history_path.exists()) {
        let text = fs::read_to_string(&history_path).map_err(|e| Error::io(&history_path, e))?;
        let history: TrainingHistory = serde_json::from_str(&text)?;
        let window = (history.episodes.len() / 20).max(1);
        let stability = training_stability_report(&history, window)?;
        w.write(
            "training_stability.csv",
            "windowed episode reward, mean Q and epsilon",
            &stability.windows_csv(),
        )?;
        let nb = cfg.report.heat_soc_bins.max(1);
        let soc_edges: Vec<f64> = (0..=nb).map(|i| i as f64 / nb as f64).collect();
        let soh_edges: Vec<f64> = default_soh_bins()
            .iter()
            .map(|b| b.lo)
            .chain([1.0])
            .collect();
        let heat = power_error_grid(agent, &test, &soc_edges, &soh_edges)?;
        w.write(
            "training_heatmap.csv",
            "greedy-policy power MAE over SoC and SoH bins",
            &heat.to_csv(),
        )?;
    }
    let manifest = w.finish()?;
    println!(
        "{} report files -> {}",
        manifest.files.len(),
        layout.report_dir().display()
    );
    Ok(())
}
