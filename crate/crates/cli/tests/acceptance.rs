//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exits 0 even when a criterion fails so the workspace test suite reports the
//! run rather than aborting on it; set `OMNIW_ACCEPTANCE_STRICT=1` to exit 1 on
//! any failure. `OMNIW_ACCEPTANCE_STEPS` shortens the training run for a quick
//! pass; criterion 3 is then marked as not run at the stated scale.

#[path = "../../core/tests/common/mod.rs"]
mod model_fixture;
#[path = "../../metrics/tests/common/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use metrics::{crps_ensemble, csi, pooled_csi, rouge_l, MetricReport, CSI_THRESHOLDS};
use numerics::{owtr, AttnMask, Graph, Tensor};
use omniweather::cot::{annotate_from_frames, build_cot_dataset, Attribute};
use omniweather::model::{guide, load_checkpoint, prompt_text, save_checkpoint, CheckpointMeta, Model, ModelConfig};
use omniweather::stormsim::{synth_event, GeneratorConfig, RadarEvent};
use omniweather::tasks::{build_task_sets, samples_from_event, TaskKind};
use omniweather::trainer::{
    ablation_matrix, evaluate, train, AblationGrid, AblationTable, EvalOptions, TaskSets, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn report(n: usize, title: &str, o: &Outcome) -> String {
    format!("{} criterion {n:>2} ({title}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail)
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let t = Instant::now();
    let checks = [
        ("vae", model_fixture::vae_grad_error()),
        ("attention", model_fixture::attention_grad_error(AttnMask::Full)),
        ("causal attention", model_fixture::attention_grad_error(AttnMask::Causal { prefix: 2, q_offset: 0 })),
        ("layer norm", model_fixture::layer_norm_grad_error()),
        ("ce head", model_fixture::text_head_grad_error()),
        ("joint loss", model_fixture::joint_grad_error()),
    ];
    let secs = t.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.1).fold(0.0, f64::max);
    let parts: Vec<String> = checks.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(worst < 1e-3 && secs < 60.0, format!("{}; {secs:.1} s", parts.join(", ")))
}

// ---------------------------------------------------------------- 2

fn random_field(r: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| match r.random_range(0..4) {
            0 => 0.0,
            1 => CSI_THRESHOLDS[r.random_range(0..CSI_THRESHOLDS.len())],
            _ => r.random_range(0.0..255.0),
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let words = ["rain", "cell", "north", "fast", "weak", "band"];
    let mut mismatches = [0usize; 3];
    for _ in 0..1000 {
        let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
        let (p, o) = (random_field(&mut r, h * w), random_field(&mut r, h * w));
        let tau = CSI_THRESHOLDS[r.random_range(0..CSI_THRESHOLDS.len())];
        if csi(&p, &o, tau).unwrap() != oracles::csi_oracle(&p, &o, tau) {
            mismatches[0] += 1;
        }
        let want = oracles::ladder_oracle(&oracles::pool_oracle(&p, h, w, 4), &oracles::pool_oracle(&o, h, w, 4));
        if pooled_csi(&p, &o, h, w, 4).unwrap() != want {
            mismatches[1] += 1;
        }
        let sentence = |r: &mut ChaCha8Rng| {
            let n = r.random_range(0..=8);
            (0..n).map(|_| words[r.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        };
        let (c, rf) = (sentence(&mut r), sentence(&mut r));
        if rouge_l(&c, &rf) != oracles::rouge_oracle(&c, &rf) {
            mismatches[2] += 1;
        }
    }
    let mut worst_crps: f64 = 0.0;
    for _ in 0..100 {
        let m = r.random_range(1..=8);
        let members: Vec<f32> = (0..m).map(|_| r.random_range(-20.0..280.0)).collect();
        let x: f32 = r.random_range(-20.0..280.0);
        let cols: Vec<[f32; 1]> = members.iter().map(|&v| [v]).collect();
        let refs: Vec<&[f32]> = cols.iter().map(|c| c.as_slice()).collect();
        let got = crps_ensemble(&refs, &[x]).unwrap();
        let exact: Vec<f64> = members.iter().map(|&v| f64::from(v)).collect();
        worst_crps = worst_crps.max((got - oracles::crps_integral_oracle(&exact, f64::from(x))).abs());
    }
    outcome(
        mismatches == [0, 0, 0] && worst_crps <= 1e-6,
        format!(
            "1000 instances: csi {} / pooled_csi(4) {} / rouge_l {} mismatches; crps max error {worst_crps:.1e} over 100 ensembles",
            mismatches[0], mismatches[1], mismatches[2]
        ),
    )
}

// ---------------------------------------------------------------- 3-6, 9

const SIDE: usize = 32;

fn acceptance_config(steps: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { side: SIDE, kappa: 16, ..ModelConfig::default() },
        steps,
        ..TrainConfig::default()
    }
}

fn training_events() -> Vec<RadarEvent> {
    let base = GeneratorConfig { side: SIDE, ..GeneratorConfig::default() };
    let fast = GeneratorConfig { speed_px: Some((1.0, 1.07)), ..base.clone() };
    let mut evs: Vec<RadarEvent> = (0..128).map(|s| synth_event(s, &base).unwrap()).collect();
    evs.extend((1000..1128).map(|s| synth_event(s, &fast).unwrap()));
    evs
}

/// First window of every held-out event, one sample per event and task.
fn held_out() -> TaskSets {
    let fast = GeneratorConfig { side: SIDE, speed_px: Some((1.0, 1.07)), ..GeneratorConfig::default() };
    let events: Vec<RadarEvent> = (5000..5064).map(|s| synth_event(s, &fast).unwrap()).collect();
    TaskKind::ALL
        .into_iter()
        .map(|t| (t, events.iter().map(|e| samples_from_event(e, t).unwrap().remove(0)).collect()))
        .collect()
}

struct Trained {
    model: Model<f32>,
    descent: Outcome,
}

fn training(steps: usize) -> Trained {
    let sets = build_task_sets(&training_events()).unwrap();
    let cfg = acceptance_config(steps);
    let t = Instant::now();
    let out = train(&cfg, &sets, None).unwrap();
    let mins = t.elapsed().as_secs_f64() / 60.0;
    let joint: Vec<f64> = out.log.joint().map(|s| s.total).collect();
    let window = 50.min(joint.len());
    let first = joint[..window].iter().sum::<f64>() / window as f64;
    let last = joint[joint.len() - window..].iter().sum::<f64>() / window as f64;
    let ratio = last / first;
    let full = steps == 2000;
    let pass = full && ratio < 0.7 && mins < 30.0;
    let scale = if full { String::new() } else { format!(" (shortened to {steps} steps; not the stated scale)") };
    let descent = outcome(
        pass,
        format!(
            "{steps} steps on 256 events: moving average {first:.4} at step 50 -> {last:.4} at the end, ratio {ratio:.3}; {mins:.1} min{scale}"
        ),
    );
    Trained { model: out.model, descent }
}

fn held_out_skill(model: &Model<f32>, held: &TaskSets) -> (Outcome, Outcome, Outcome) {
    let r: MetricReport = evaluate(model, held, &EvalOptions::default()).unwrap();
    let r1: MetricReport =
        evaluate(model, &gen_only(held), &EvalOptions { cfg_scale: 1.0, ..EvalOptions::default() }).unwrap();
    let get = |r: &MetricReport, t: &str, m: &str| r.get(t, m).unwrap_or(f64::NAN);
    let base =
        |r: &MetricReport, b: &str, m: &str| r.baselines.get(b).and_then(|x| x.get(m)).copied().unwrap_or(f64::NAN);

    let (mse, pmse) = (get(&r, "nowcast", "mse"), base(&r, "persistence", "mse"));
    let nowcast = outcome(
        mse < pmse,
        format!(
            "64 held-out events at 1.0-1.07 px/frame, CFG=2: MSE {mse:.1} vs persistence {pmse:.1}; CSI-M {:.3} vs persistence {:.3} (CFG=1: MSE {:.1}, CSI-M {:.3})",
            get(&r, "nowcast", "csi_m"),
            base(&r, "persistence", "csi_m"),
            get(&r1, "nowcast", "mse"),
            get(&r1, "nowcast", "csi_m"),
        ),
    );
    let c16 = get(&r, "inversion", "csi_16");
    let inversion = outcome(
        c16 > 0.5,
        format!(
            "CSI@16 {c16:.3} at CFG=2 vs all-zero predictor {:.3} (CFG=1: {:.3})",
            base(&r, "zero_inversion", "csi_16"),
            get(&r1, "inversion", "csi_16")
        ),
    );
    let acc = get(&r, "frame_understand", "accuracy");
    let understanding = outcome(
        acc >= 0.7,
        format!(
            "frame-understanding attribute accuracy {acc:.3} on 64 held-out frames (static attributes {:.3}; sequence understanding {:.3})",
            get(&r, "frame_understand", "static_accuracy"),
            get(&r, "sequence_understand", "accuracy")
        ),
    );
    (nowcast, inversion, understanding)
}

fn gen_only(sets: &TaskSets) -> TaskSets {
    sets.iter().filter(|(t, _)| t.is_generation()).map(|(t, v)| (*t, v.clone())).collect()
}

fn max_abs(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from((x - y).abs())).fold(0.0, f64::max)
}

fn cfg_identities(model: &Model<f32>, held: &TaskSets, grid: &AblationTable) -> Outcome {
    let mut worst: f64 = 0.0;
    for task in [TaskKind::Nowcast, TaskKind::Inversion] {
        for s in held[&task].iter().take(4) {
            let prompt = prompt_text(task);
            let ids = model.vocab.tokenize(&prompt);
            let pass = |p: Option<&[usize]>| {
                let mut g = Graph::inference();
                let z = model.gen_latents(&mut g, task, &s.inputs, p).unwrap();
                g.value(z).data().to_vec()
            };
            let (c, u) = (pass(Some(&ids)), pass(None));
            let one = model.forward_generate(task, &s.inputs, &prompt, 1.0).unwrap().latents;
            let zero = model.forward_generate(task, &s.inputs, &prompt, 0.0).unwrap().latents;
            for e in [
                max_abs(one.data(), &c),
                max_abs(zero.data(), &u),
                max_abs(&guide(&c, &u, 1.0), &c),
                max_abs(&guide(&c, &u, 0.0), &u),
            ] {
                worst = worst.max(e);
            }
        }
    }
    let cfg_rows: Vec<_> = grid.rows.iter().filter(|r| r.table == "cfg").collect();
    let labels: Vec<&str> = cfg_rows.iter().map(|r| r.label.as_str()).collect();
    let csim = |label: &str| {
        cfg_rows
            .iter()
            .find(|r| r.label == label)
            .and_then(|r| r.metrics.get("nowcast.csi_m"))
            .copied()
            .unwrap_or(f64::NAN)
    };
    let (c2, c1) = (csim("CFG=2"), csim("CFG=1"));
    let direction = if c2 > c1 {
        "CFG=2 above CFG=1"
    } else if c2 < c1 {
        "CFG=2 below CFG=1"
    } else {
        "CFG=2 equal to CFG=1"
    };
    outcome(
        worst <= 1e-5 && labels == ["CFG=2", "CFG=1"],
        format!("max latent error {worst:.1e} over 8 samples; rows {labels:?}; nowcast CSI-M {c2:.3} vs {c1:.3} ({direction})"),
    )
}

// ---------------------------------------------------------------- 7, 8

fn cot_closure() -> Outcome {
    let cfg = GeneratorConfig::default();
    let evs: Vec<RadarEvent> = (0..500).map(|s| synth_event(7000 + s, &cfg).unwrap()).collect();
    let mut notes = Vec::new();
    let mut pass = true;
    for task in [TaskKind::Nowcast, TaskKind::Inversion] {
        let clean = build_cot_dataset(&evs, task, 500, 0.0, 11).unwrap();
        pass &= clean.entries.len() == 500 && clean.pass_rate() == 1.0;
        let mut rates = Vec::new();
        for r in [0.1, 0.2, 0.5] {
            let ds = build_cot_dataset(&evs, task, 500, r, 11).unwrap();
            let rejected = ds.rejected.len() as f64 / ds.attempted() as f64;
            pass &= ds.rejected.len() == (r * 500.0).round() as usize && ds.corrupted == ds.rejected.len();
            rates.push(format!("{r}->{rejected:.3}"));
        }
        notes.push(format!("{task}: pass rate {:.3}, rejected {}", clean.pass_rate(), rates.join(" ")));
    }
    outcome(pass, format!("500 events; {}", notes.join("; ")))
}

fn annotator_agreement() -> Outcome {
    let checked = [
        Attribute::MotionDirection,
        Attribute::InitialPosition,
        Attribute::MaxPixelLevel,
        Attribute::IntensityEvolution,
    ];
    let cfg = GeneratorConfig::default();
    let mut agree = [0usize; 4];
    for seed in 0..500 {
        let ev = synth_event(seed, &cfg).unwrap();
        let seen = annotate_from_frames(&ev.frames).unwrap();
        for (k, a) in checked.iter().enumerate() {
            agree[k] += usize::from(seen.choice(*a) == ev.truth.choice(*a));
        }
    }
    let rates: Vec<f64> = agree.iter().map(|&a| a as f64 / 500.0).collect();
    let parts: Vec<String> = checked.iter().zip(&rates).map(|(a, r)| format!("{} {r:.3}", a.key())).collect();
    outcome(rates.iter().all(|&r| r >= 0.95), format!("500 events: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 10

fn desk_grid() -> AblationGrid {
    let mut base = TrainConfig {
        model: model_fixture::tiny_config(),
        steps: 30,
        batch_size: 4,
        vae_pretrain_steps: 20,
        warmup_steps: 5,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    base.seed = 3;
    AblationGrid { base, eval: EvalOptions { limit: Some(4), ..EvalOptions::default() }, ..AblationGrid::default() }
}

fn ablation_harness() -> (Outcome, AblationTable) {
    let train_sets = build_task_sets(&model_fixture::events(12, model_fixture::SIDE)).unwrap();
    let gc = GeneratorConfig { side: model_fixture::SIDE, ..GeneratorConfig::default() };
    let eval_sets = build_task_sets(&(900..906).map(|s| synth_event(s, &gc).unwrap()).collect::<Vec<_>>()).unwrap();
    let grid = desk_grid();
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = ablation_matrix(&grid, &train_sets, &eval_sets, Some(a.path())).unwrap();
    let fresh = ablation_matrix(&grid, &train_sets, &eval_sets, Some(b.path())).unwrap();
    let resumed = ablation_matrix(&grid, &train_sets, &eval_sets, Some(a.path())).unwrap();

    let gen_cols =
        ["nowcast.mse", "nowcast.csi_m", "nowcast.csi_p4", "nowcast.crps", "inversion.csi_16", "inversion.rmse"];
    let und_cols = [
        "frame_understand.accuracy",
        "frame_understand.rouge_l",
        "sequence_understand.accuracy",
        "sequence_understand.rouge_l",
    ];
    let has = |r: &omniweather::trainer::AblationRow, cols: &[&str]| {
        cols.iter().all(|c| r.metrics.get(*c).is_some_and(|v| v.is_finite()))
    };
    let lacks = |r: &omniweather::trainer::AblationRow, cols: &[&str]| cols.iter().all(|c| !r.metrics.contains_key(*c));
    let rows = |t: &str| first.rows.iter().filter(|r| r.table == t).collect::<Vec<_>>();
    let labels = |t: &str| rows(t).iter().map(|r| r.label.clone()).collect::<Vec<_>>();
    let tasks = rows("tasks");
    let schema = labels("tasks") == ["U", "G", "U+G"]
        && has(tasks[0], &und_cols)
        && lacks(tasks[0], &gen_cols)
        && has(tasks[1], &gen_cols)
        && lacks(tasks[1], &und_cols)
        && has(tasks[2], &gen_cols)
        && has(tasks[2], &und_cols)
        && labels("encoder") == ["VAE encoder", "Radar sequence encoder"]
        && rows("encoder").iter().all(|r| has(r, &gen_cols[..4]))
        && labels("cfg") == ["CFG=2", "CFG=1"]
        && rows("cfg").iter().all(|r| has(r, &gen_cols))
        && rows("cfg")[0].default
        && tasks[2].default;
    let same = first == fresh && first == resumed;
    let cells: usize = first.rows.iter().map(|r| r.metrics.len()).sum();
    (
        outcome(
            schema && same,
            format!(
                "tables {:?} with {} rows and {cells} populated cells; schema {}; rerun {} and resumed run {}",
                first.tables(),
                first.rows.len(),
                if schema { "complete" } else { "INCOMPLETE" },
                if first == fresh { "identical" } else { "DIFFERENT" },
                if first == resumed { "identical" } else { "DIFFERENT" },
            ),
        ),
        first,
    )
}

// ---------------------------------------------------------------- 11

fn random_tensor(r: &mut ChaCha8Rng) -> Tensor<f32> {
    let rank = r.random_range(0..=4);
    let shape: Vec<usize> = (0..rank).map(|_| r.random_range(0..=6)).collect();
    let n = shape.iter().product();
    let data = (0..n).map(|_| f32::from_bits(r.random())).collect();
    Tensor::new(shape, data).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn owtr_round_trips(dir: &Path) -> (usize, usize) {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut ok = 0;
    for i in 0..100 {
        let t = random_tensor(&mut r);
        let p = dir.join(format!("t{i}.owtr"));
        owtr::write(&p, &t).unwrap();
        let back = owtr::read(&p).unwrap();
        ok += usize::from(back.shape() == t.shape() && bits(back.data()) == bits(t.data()));
    }
    (ok, 100)
}

fn checkpoint_round_trip(model: &Model<f32>, held: &TaskSets, dir: &Path) -> bool {
    save_checkpoint(dir, model, &CheckpointMeta::default()).unwrap();
    let (back, _) = load_checkpoint(dir).unwrap();
    let params_equal =
        model.params.iter().zip(back.params.iter()).all(|(a, b)| a.1 == b.1 && bits(a.2.data()) == bits(b.2.data()));
    let s = &held[&TaskKind::Nowcast][0];
    let prompt = prompt_text(TaskKind::Nowcast);
    let gen = |m: &Model<f32>| bits(m.forward_generate(s.task, &s.inputs, &prompt, 2.0).unwrap().latents.data());
    let u = &held[&TaskKind::FrameUnderstand][0];
    let und = |m: &Model<f32>| m.forward_understand(u.task, &u.inputs, &u.prompt(), 40, 0.0, 0).unwrap();
    params_equal && gen(model) == gen(&back) && und(model) == und(&back)
}

fn omniw(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_omniw"))
        .args(args)
        .current_dir(dir)
        .env_remove("OMNIW_JUDGE_ENDPOINT")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Relative path to file contents, with JSON wall-clock fields removed.
fn tree(dir: &Path) -> BTreeMap<PathBuf, String> {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(m) => {
                m.remove("wall_ms");
                m.values_mut().for_each(strip);
            }
            Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    fn walk(root: &Path, d: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
                continue;
            }
            let bytes = fs::read(&p).unwrap();
            let text = match p.extension().and_then(|e| e.to_str()) {
                Some("json" | "jsonl") => {
                    String::from_utf8(bytes).unwrap().lines().map(|l| l.to_string()).collect::<Vec<_>>().join("\n")
                }
                _ => format!("{bytes:?}"),
            };
            let text = match p.extension().and_then(|e| e.to_str()) {
                Some("json") => {
                    let mut v: Value = serde_json::from_str(&text).unwrap();
                    strip(&mut v);
                    v.to_string()
                }
                Some("jsonl") => text
                    .lines()
                    .map(|l| {
                        let mut v: Value = serde_json::from_str(l).unwrap();
                        strip(&mut v);
                        v.to_string()
                    })
                    .collect::<Vec<_>>()
                    .join("\n"),
                _ => text,
            };
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), text);
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn stub_judge() -> (String, std::thread::JoinHandle<()>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/score", server.server_addr().to_ip().unwrap());
    let h = std::thread::spawn(move || {
        while let Ok(Some(req)) = server.recv_timeout(Duration::from_secs(5)) {
            let _ = req.respond(tiny_http::Response::from_string(r#"{"score":7.0}"#));
        }
    });
    (url, h)
}

/// Runs every subcommand twice and compares the two output trees.
fn cli_reproducibility(dir: &Path) -> Result<Vec<&'static str>, String> {
    let model = r#"{"d_model":16,"n_heads":2,"n_layers":2,"ffn_mult":2,"patch":8,"side":16,"latent_channels":2,"vae_channels":[4,4],"kappa":3,"seq_layers":1,"n_null":2}"#;
    let base = format!(
        r#""model":{model},"steps":4,"batch_size":2,"vae_pretrain_steps":2,"warmup_steps":1,"checkpoint_every":0"#
    );
    fs::write(dir.join("train.json"), format!("{{{base}}}")).unwrap();
    fs::write(dir.join("grid.json"), format!(r#"{{"base":{{{base}}},"eval":{{"limit":1}}}}"#)).unwrap();
    let (url, judge) = stub_judge();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("gen-data", vec!["gen-data", "--n-events", "3", "--set", "generator.side=16"]),
        ("build-cot", vec!["build-cot", "gen-data-1", "--inject-corruption", "0.3"]),
        ("train", vec!["train", "--config", "train.json", "--data", "gen-data-1"]),
        ("eval", vec!["eval", "gen-data-1", "--checkpoint", "train-1/checkpoint", "--limit", "1"]),
        (
            "infer",
            vec!["infer", "gen-data-1", "--checkpoint", "train-1/checkpoint", "--sample", "ev0-w0-nowcast", "--think"],
        ),
        ("ablate", vec!["ablate", "--config", "grid.json", "--data", "gen-data-1", "--eval-data", "gen-data-1"]),
        ("judge", vec!["judge", "eval-1", "--judge-endpoint", url.as_str()]),
    ];
    let mut checked = Vec::new();
    for (name, args) in &runs {
        for k in 1..=2 {
            let out = format!("{name}-{k}");
            let mut a = args.clone();
            a.extend(["--out", out.as_str()]);
            omniw(dir, &a)?;
        }
        if tree(&dir.join(format!("{name}-1"))) != tree(&dir.join(format!("{name}-2"))) {
            return Err(format!("{name} outputs differ between runs"));
        }
        checked.push(*name);
    }
    drop(judge);
    Ok(checked)
}

fn format_round_trips(model: &Model<f32>, held: &TaskSets) -> Outcome {
    let dir = TempDir::new().unwrap();
    fs::create_dir_all(dir.path().join("owtr")).unwrap();
    let (ok, n) = owtr_round_trips(&dir.path().join("owtr"));
    let ckpt = checkpoint_round_trip(model, held, &dir.path().join("checkpoint"));
    let cli_dir = TempDir::new().unwrap();
    let cli = cli_reproducibility(cli_dir.path());
    let cli_note = match &cli {
        Ok(names) => format!("reproducible: {}", names.join(", ")),
        Err(e) => format!("NOT reproducible: {e}"),
    };
    outcome(
        ok == n && ckpt && cli.is_ok(),
        format!(
            "OWTR {ok}/{n} bitwise; checkpoint save/load/forward {}; CLI {cli_note}",
            if ckpt { "bitwise identical" } else { "DIFFERS" }
        ),
    )
}

fn judge_port_free() -> bool {
    TcpListener::bind("127.0.0.1:0").is_ok()
}

fn main() {
    // libtest passes flags such as `--nocapture`; they do not apply here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let steps: usize = std::env::var("OMNIW_ACCEPTANCE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let started = Instant::now();
    let mut lines = BTreeMap::new();
    let mut record = |n: usize, title: &str, o: Outcome| {
        let line = report(n, title, &o);
        println!("{line}");
        lines.insert(n, (o.pass, line));
    };

    record(1, "gradient correctness", gradients());
    record(2, "metric oracles", metric_oracles());
    record(7, "CoT closure", cot_closure());
    record(8, "annotator agreement", annotator_agreement());
    let (grid_outcome, grid) = ablation_harness();
    record(10, "ablation harness", grid_outcome);

    let trained = training(steps);
    record(3, "training descent", trained.descent);
    let held = held_out();
    let (nowcast, inversion, understanding) = held_out_skill(&trained.model, &held);
    record(4, "nowcast skill", nowcast);
    record(5, "inversion learnability", inversion);
    record(6, "understanding accuracy", understanding);
    record(9, "CFG identities", cfg_identities(&trained.model, &held, &grid));
    assert!(judge_port_free(), "loopback networking unavailable");
    record(11, "format round-trips", format_round_trips(&trained.model, &held));

    println!("\nsummary ({:.1} min):", started.elapsed().as_secs_f64() / 60.0);
    for (_, line) in lines.values() {
        println!("{line}");
    }
    let failed = lines.values().filter(|(p, _)| !*p).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 && std::env::var("OMNIW_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
