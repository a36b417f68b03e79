use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde_json::json;
use thermotwin::assistant::{assist, idle_fixture, Backend, HttpBackend, TwinExpectation};
use thermotwin::gru::{load_checkpoint, save_checkpoint};
use thermotwin::pipeline::{
    evaluate, full_grid, pack_rows, split_sequential, sweep, train, write_history, write_sweep, PreparedData, TrainConfig,
    WindowSet,
};
use thermotwin::plant::{dataset_scenario, run_scenario, staircase_scenario};
use thermotwin::schema::{read_dataset, write_dataset, SensorFrame, HEAT_POWER_ID};
use thermotwin::twin::{cold_start_frames, input_rows, plant_steady_heat, rollout, speedup_report, RolloutOptions};
use thermotwin_client::GatewayClient;
use thermotwin_server::ServerConfig;

use crate::args::*;
use crate::config::{load, load_scenario, FileConfig};

/// Seconds the plant oracle runs before its steady heating power is read.
const PLANT_ORACLE_SECONDS: u64 = 4000;

fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable))
}

/// Flag if given on the command line, else the config file's value, else the flag default.
fn pick<T>(m: &ArgMatches, id: &str, flag: T, conf: Option<T>) -> T {
    if explicit(m, id) {
        flag
    } else {
        conf.unwrap_or(flag)
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn dispatch(cli: Cli, m: &ArgMatches) -> anyhow::Result<()> {
    let file = load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(&file, a),
        Command::GenDataset(a) => gen_dataset(&file, a),
        Command::Train(a) => train_cmd(&file, a, m),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(&file, a, m),
        Command::Twin(a) => twin_cmd(&file, a, m),
        Command::Serve(a) => serve_cmd(&file, a, m),
        Command::Assist(a) => assist_cmd(&file, a),
    }
}

fn simulate(file: &FileConfig, a: SimulateArgs) -> anyhow::Result<()> {
    let mut sc = if a.scenario == "staircase" { staircase_scenario() } else { load_scenario(Path::new(&a.scenario))? };
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    let traj = run_scenario(&file.plant, &sc)?;
    write_dataset(&a.out, &traj)?;
    println!("wrote {} frames to {}", traj.len(), a.out.display());
    Ok(())
}

fn gen_dataset(file: &FileConfig, a: GenDatasetArgs) -> anyhow::Result<()> {
    if a.steps == 0 {
        bail!("--steps must be at least 1");
    }
    let traj = run_scenario(&file.plant, &dataset_scenario(a.steps, a.seed))?;
    write_dataset(&a.out, &traj)?;
    println!("wrote {} frames to {}", traj.len(), a.out.display());
    Ok(())
}

fn train_config(file: &FileConfig, a: &TrainArgs, m: &ArgMatches) -> TrainConfig {
    let mut c = file.train.clone().unwrap_or_default();
    let base = file.train.is_none();
    macro_rules! take {
        ($field:ident, $id:literal, $val:expr) => {
            if base || explicit(m, $id) {
                c.$field = $val;
            }
        };
    }
    take!(hidden, "hidden", a.hidden);
    take!(layers, "layers", a.layers);
    take!(batch, "batch", a.batch);
    take!(lr, "lr", a.lr);
    take!(weight_decay, "weight_decay", a.weight_decay);
    take!(early_stop_patience, "patience", a.patience);
    take!(max_epochs, "max_epochs", a.max_epochs);
    take!(seed, "seed", a.seed);
    c
}

fn train_cmd(file: &FileConfig, a: TrainArgs, m: &ArgMatches) -> anyhow::Result<()> {
    let cfg = train_config(file, &a, m);
    let traj = read_dataset(&a.data).with_context(|| format!("cannot load dataset {}", a.data.display()))?;
    let data = PreparedData::new(&traj)?;
    tracing::info!(hidden = cfg.hidden, layers = cfg.layers, windows = data.train.len(), "training");
    let out = train(&data, &cfg, |r| {
        tracing::info!("epoch {:>4}  train {:.5}  valid {:.5}  lr {:.1e}", r.epoch, r.train_loss, r.valid_loss, r.lr)
    })?;
    let test = evaluate(&out.model, &data.test)?;
    let hyper = json!({
        "train": cfg,
        "best_epoch": out.best_epoch,
        "epochs_run": out.history.len(),
        "dataset_rows": traj.len(),
    });
    save_checkpoint(&out.model, hyper, &a.out)?;
    if let Some(p) = &a.history {
        write_history(&out.history, p)?;
    }
    let metrics = json!({ "split": "test", "best_epoch": out.best_epoch, "valid_loss": out.best().valid_loss, "metrics": test });
    if let Some(p) = &a.metrics {
        write_json(p, &metrics)?;
    }
    println!(
        "best epoch {} of {}: valid loss {:.5}; test RMSE temperature {:.3} K, actuators {:.2} %",
        out.best_epoch,
        out.history.len(),
        out.best().valid_loss,
        test.temperature.rmse,
        test.actuator.rmse
    );
    Ok(())
}

/// One split of `traj`, normalised with the model's own statistics.
fn split_windows(traj: &[SensorFrame], split: Split, norm: &thermotwin::pipeline::NormStats) -> anyhow::Result<WindowSet> {
    let splits = split_sequential(traj.len())?;
    let r = match split {
        Split::Train => splits.train,
        Split::Valid => splits.valid,
        Split::Test => splits.test,
    };
    let (inputs, outputs) = pack_rows(traj)?;
    Ok(WindowSet::from_rows(&inputs[r.clone()], &outputs[r.clone()], r.start, norm)?)
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<()> {
    let (model, _) = load_checkpoint(&a.model).with_context(|| format!("cannot load checkpoint {}", a.model.display()))?;
    let traj = read_dataset(&a.data).with_context(|| format!("cannot load dataset {}", a.data.display()))?;
    let set = split_windows(&traj, a.split, &model.norm)?;
    let metrics = evaluate(&model, &set)?;
    let split = format!("{:?}", a.split).to_lowercase();
    let report = json!({ "split": split, "metrics": metrics });
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn sweep_cmd(file: &FileConfig, a: SweepArgs, m: &ArgMatches) -> anyhow::Result<()> {
    let mut base = file.train.clone().unwrap_or_default();
    let all = file.train.is_none();
    if all || explicit(m, "patience") {
        base.early_stop_patience = a.patience;
    }
    if all || explicit(m, "max_epochs") {
        base.max_epochs = a.max_epochs;
    }
    if all || explicit(m, "seed") {
        base.seed = a.seed;
    }
    let traj = read_dataset(&a.data).with_context(|| format!("cannot load dataset {}", a.data.display()))?;
    let data = PreparedData::new(&traj)?;
    let rows = sweep(&full_grid(), &data, &base, a.jobs.max(1))?;
    write_sweep(&rows, &a.out)?;
    for r in &rows {
        let mark = if r.is_best { "  <- best" } else { "" };
        println!("{:>5} x {}  train {:.5}  valid {:.5}  params {:>9}{mark}", r.hidden, r.layers, r.train_loss, r.valid_loss, r.param_count);
    }
    Ok(())
}

fn twin_cmd(file: &FileConfig, a: TwinArgs, m: &ArgMatches) -> anyhow::Result<()> {
    let opts = RolloutOptions {
        max_steps: pick(m, "max_steps", a.max_steps, file.twin.max_steps),
        eps: pick(m, "eps", a.eps, file.twin.eps),
        window: pick(m, "window", a.window, file.twin.window),
    };
    if opts.window < 2 {
        bail!("--window must be at least 2");
    }
    let (model, _) = load_checkpoint(&a.model).with_context(|| format!("cannot load checkpoint {}", a.model.display()))?;
    let frames = cold_start_frames(&file.plant, a.seed)?;
    let rows = input_rows(&frames[frames.len() - model.dims.t_e..])?;
    let result = rollout(&model, &rows, a.demand, opts)?;
    let report = speedup_report(&result);
    let last = result.trajectory.last().context("empty rollout")?;
    let heat = last.value(HEAT_POWER_ID)?;
    let mut out = json!({
        "demand_kw": a.demand,
        "cold_start_seed": a.seed,
        "options": opts,
        "predicted_heat_kw": heat,
        "report": report,
    });
    if a.compare_plant {
        let oracle = plant_steady_heat(&file.plant, a.demand, PLANT_ORACLE_SECONDS)?;
        out["plant"] = json!({
            "steady_heat_kw": oracle,
            "relative_error": (heat - oracle) / oracle,
        });
    }
    write_json(&a.report, &out)?;
    if let Some(p) = &a.trajectory {
        write_dataset(p, &result.trajectory)?;
    }
    println!(
        "converged={} step={} heat={heat:.3} kW  {} steps in {:.3} s ({:.0}x real time)",
        report.converged,
        report.convergence_step.map_or("-".to_string(), |s| s.to_string()),
        report.steps,
        report.wall_clock_s,
        report.speedup
    );
    Ok(())
}

fn backend(arg: Option<&str>, model_name: Option<&str>) -> Backend {
    match arg {
        None => {
            let mut b = Backend::from_env();
            if let (Backend::Http(h), Some(name)) = (&mut b, model_name) {
                h.model = name.to_string();
            }
            b
        }
        Some("fallback") => Backend::Fallback,
        Some(url) => {
            let env_model = std::env::var("ASSISTANT_MODEL").ok();
            let name = model_name.map(str::to_string).or(env_model).unwrap_or_else(|| "gpt-4o".into());
            let mut h = HttpBackend::new(url, name);
            h.api_key = std::env::var("ASSISTANT_API_KEY").ok().filter(|s| !s.is_empty());
            Backend::Http(h)
        }
    }
}

fn serve_cmd(file: &FileConfig, a: ServeArgs, m: &ArgMatches) -> anyhow::Result<()> {
    let model = match (&a.model, a.twin) {
        (Some(p), true) => Some(load_checkpoint(p).with_context(|| format!("cannot load checkpoint {}", p.display()))?.0),
        (Some(_), false) => {
            tracing::warn!("--model is only used with --twin");
            None
        }
        _ => None,
    };
    if !(a.twin_period > 0.0) {
        bail!("--twin-period must be positive");
    }
    let cfg = ServerConfig {
        bind: a.bind,
        port: pick(m, "port", a.port, file.serve.port),
        http_port: pick(m, "http_port", a.http_port, file.serve.http_port),
        plant: file.plant.clone(),
        noise: !a.no_noise,
        seed: a.seed,
        model,
        twin_period: Duration::from_secs_f64(a.twin_period),
        backend: backend(a.backend.as_deref(), None),
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let mut handle = thermotwin_server::start(cfg).await?;
        println!("telemetry on {}, gateway on http://{}", handle.telemetry_addr, handle.http_addr);
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = handle.wait() => bail!("server task stopped"),
        }
        Ok(())
    })
}

fn assist_cmd(file: &FileConfig, a: AssistArgs) -> anyhow::Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    if let Some(url) = &a.gateway {
        let reply = rt.block_on(GatewayClient::new(url.as_str()).assist(&a.query))?;
        if !reply.ok() {
            bail!("gateway answered {}: {}", reply.status, reply.body);
        }
        if a.json {
            println!("{}", serde_json::to_string_pretty(&reply.body["reply"])?);
        } else {
            println!("{}", reply.body["reply"]["response"].as_str().unwrap_or_default());
        }
        return Ok(());
    }
    let (frame, twin): (SensorFrame, Option<TwinExpectation>) = match &a.frame {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            (serde_json::from_str(&text).with_context(|| format!("{} is not a sensor frame", p.display()))?, None)
        }
        None => {
            let (f, t) = idle_fixture();
            (f, Some(t))
        }
    };
    let backend = backend(a.backend.as_deref(), a.model_name.as_deref());
    let heater_max_kw = file.plant.heater_max_power / 1000.0;
    let reply = rt.block_on(assist(&a.query, &frame, twin.as_ref(), &backend, heater_max_kw))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&reply)?);
    } else {
        println!("{}", reply.response);
    }
    Ok(())
}
