use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use telemetry_gpt::decode::DecodeConfig;
use telemetry_gpt::evalsuite::TrainingMonitor;
use telemetry_gpt::gptcore::{
    load_checkpoint, save_checkpoint, train as train_model, LoraConfig, ModelConfig, ModelState, TrainConfig,
    TrainExample,
};
use telemetry_gpt::promptcodec::{read_jsonl, render_prompt, write_jsonl, PromptRecord, PromptTemplate};
use telemetry_gpt::telemetry::{
    split_dataset, synthesize_dataset, write_csi_file, write_ftm_csv, EnvProfile, ProfileName, SplitRatios,
    TelemetrySample,
};

use crate::config::{read_config_file, resolve, resolve_seed, Overrides, RunDir};
use crate::data::load_samples;
use crate::{Global, PrepareArgs, SynthArgs, TrainArgs};

/// Fails when a required path was set by neither a flag nor the config file.
pub fn need<'a>(path: &'a Path, flag: &str) -> Result<&'a Path> {
    if path.as_os_str().is_empty() {
        bail!("missing {flag}");
    }
    Ok(path)
}

fn default_rps(name: ProfileName) -> (usize, usize) {
    match name {
        ProfileName::Corridor | ProfileName::Custom => (114, 60),
        ProfileName::Theatre => (120, 60),
        ProfileName::Office => (108, 60),
        ProfileName::Hallway => (5, 250),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthRun {
    seed: u64,
    out_dir: PathBuf,
    profile: EnvProfile,
    n_rps: usize,
    per_rp: usize,
}

pub fn synth(g: &Global, a: SynthArgs) -> Result<()> {
    let file = read_config_file(g.config.as_deref())?;
    let seed = resolve_seed(g.seed, &file)?;
    let name = match (a.profile, file.pointer("/profile/name")) {
        (Some(n), _) => n,
        (None, Some(v)) => serde_json::from_value(v.clone()).context("config field profile.name")?,
        (None, None) => ProfileName::Corridor,
    };
    let (n_rps, per_rp) = default_rps(name);
    let defaults = SynthRun { seed, out_dir: PathBuf::new(), profile: EnvProfile::preset(name, seed), n_rps, per_rp };
    let mut o = Overrides::default();
    o.set("out_dir", a.out)
        .set("profile.name", a.profile)
        .set("n_rps", a.rps)
        .set("per_rp", a.per_rp)
        .set("profile.n_aps", a.n_aps)
        .set("profile.grid_m", a.grid)
        .set("profile.pathloss_exponent", a.pathloss_exponent)
        .set("profile.rssi_ref_dbm", a.rssi_ref)
        .set("profile.rssi_noise_std_db", a.rssi_noise)
        .set("profile.rtt_offset_ns", a.rtt_offset)
        .set("profile.rtt_noise_std_ns", a.rtt_noise)
        .set("profile.nlos_bias_ns", a.nlos_bias)
        .set("profile.csi_noise_std", a.csi_noise);
    let mut cfg: SynthRun = resolve(&defaults, &file, o)?;
    cfg.seed = seed;
    cfg.profile.seed = seed;
    let out = need(&cfg.out_dir, "--out")?.to_path_buf();

    let samples = synthesize_dataset(&cfg.profile, cfg.n_rps, cfg.per_rp)?;
    let mut run = RunDir::create(&out)?;
    if cfg.profile.name == ProfileName::Hallway {
        let frames: Vec<_> = samples
            .iter()
            .map(|s| match s {
                TelemetrySample::Csi(f) => Ok(f.clone()),
                TelemetrySample::FtmRssi(_) => bail!("hallway profile produced a non-CSI sample"),
            })
            .collect::<Result<_>>()?;
        write_csi_file(&run.file("samples.txt"), &frames)?;
        let labels: String = frames.iter().map(|f| format!("{}\n", f.label_m)).collect();
        run.write_text("labels.txt", &labels)?;
    } else {
        let recs: Vec<_> = samples.iter().filter_map(|s| s.as_ftm_rssi().cloned()).collect();
        write_ftm_csv(&run.file("samples.csv"), &recs)?;
    }
    println!("{} samples ({:?}) written to {}", samples.len(), cfg.profile.name, out.display());
    run.finish("synth", seed, &cfg)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrepareRun {
    seed: u64,
    input: PathBuf,
    labels: Option<PathBuf>,
    out_dir: PathBuf,
    ratios: SplitRatios,
    stratify: bool,
    template: PromptTemplate,
}

pub fn prepare(g: &Global, a: PrepareArgs) -> Result<()> {
    let file = read_config_file(g.config.as_deref())?;
    let seed = resolve_seed(g.seed, &file)?;
    let defaults = PrepareRun {
        seed,
        input: PathBuf::new(),
        labels: None,
        out_dir: PathBuf::new(),
        ratios: SplitRatios::new(0.8, 0.1, 0.1),
        stratify: true,
        template: PromptTemplate::default(),
    };
    let mut o = Overrides::default();
    o.set("input", a.input)
        .set("labels", a.labels)
        .set("out_dir", a.out)
        .set("ratios", a.ratios.map(|[t, v, s]| SplitRatios::new(t, v, s)))
        .set("stratify", a.stratify);
    let mut cfg: PrepareRun = resolve(&defaults, &file, o)?;
    cfg.seed = seed;
    cfg.template.validate()?;
    let input = need(&cfg.input, "--input")?;
    let out = need(&cfg.out_dir, "--out")?;

    let samples = load_samples(input, cfg.labels.as_deref(), &cfg.template)?;
    let labels: Vec<f64> = samples.iter().map(TelemetrySample::label_m).collect();
    let split = split_dataset(samples.len(), &labels, cfg.ratios, seed, cfg.stratify)?;
    let mut run = RunDir::create(out)?;
    for (name, idx) in [("train.jsonl", &split.train), ("val.jsonl", &split.validation), ("test.jsonl", &split.test)] {
        let records: Vec<PromptRecord> =
            idx.iter().map(|&i| render_prompt(&samples[i], &cfg.template)).collect::<Result<_, _>>()?;
        write_jsonl(&run.file(name), &records)?;
    }
    run.write_json("split.json", &split)?;
    println!(
        "{} samples: {} train, {} val, {} test",
        samples.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    run.finish("prepare", seed, &cfg)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRun {
    seed: u64,
    train_data: PathBuf,
    val_data: Option<PathBuf>,
    out_dir: PathBuf,
    model: ModelConfig,
    optim: TrainConfig,
    lora: Option<LoraConfig>,
    init: Option<PathBuf>,
    resume: Option<PathBuf>,
    val_cap: usize,
    decode: DecodeConfig,
    template: PromptTemplate,
}

pub fn train(g: &Global, a: TrainArgs) -> Result<()> {
    let file = read_config_file(g.config.as_deref())?;
    let seed = resolve_seed(g.seed, &file)?;
    let defaults = TrainRun {
        seed,
        train_data: PathBuf::new(),
        val_data: None,
        out_dir: PathBuf::new(),
        model: ModelConfig::default(),
        optim: TrainConfig::default(),
        lora: None,
        init: None,
        resume: None,
        val_cap: 50,
        decode: DecodeConfig::default(),
        template: PromptTemplate::default(),
    };
    let mut o = Overrides::default();
    o.set("train_data", a.train_data)
        .set("val_data", a.val_data)
        .set("out_dir", a.out)
        .set("model.n_layers", a.layers)
        .set("model.n_heads", a.heads)
        .set("model.d_model", a.d_model)
        .set("model.d_ff", a.d_ff)
        .set("model.context_len", a.context)
        .set("model.dropout_p", a.dropout)
        .set("optim.batch_size", a.batch_size)
        .set("optim.learning_rate", a.lr)
        .set("optim.max_iters", a.iters)
        .set("optim.eval_interval", a.eval_interval)
        .set("optim.loss_region", a.loss_region)
        .set("optim.grad_clip", a.grad_clip)
        .set("init", a.init)
        .set("resume", a.resume)
        .set("val_cap", a.val_cap)
        .set("decode.max_new_tokens", a.max_new_tokens);
    if a.lora {
        let mut l = serde_json::Map::new();
        if let Some(r) = a.rank {
            l.insert("rank".into(), json!(r));
        }
        if let Some(al) = a.alpha {
            l.insert("alpha".into(), json!(al));
        }
        if let Some(t) = a.targets {
            l.insert("targets".into(), serde_json::to_value(t)?);
        }
        o.set("lora", Some(Value::Object(l)));
    }
    let mut cfg: TrainRun = resolve(&defaults, &file, o)?;
    cfg.seed = seed;
    cfg.model.seed = seed;
    cfg.optim.seed = seed;
    if let Some(l) = cfg.lora.as_mut() {
        l.seed = seed;
    }
    cfg.decode = cfg.decode.clone().with_seed(seed);
    cfg.template.validate()?;
    let train_path = need(&cfg.train_data, "--train")?.to_path_buf();
    let out = need(&cfg.out_dir, "--out")?.to_path_buf();

    let state: ModelState<f32> = if let Some(p) = &cfg.resume {
        if cfg.lora.is_some() || cfg.init.is_some() {
            log::warn!("resuming {}: --lora and --init are ignored", p.display());
        }
        load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?
    } else {
        let mut s = match &cfg.init {
            Some(p) => {
                let mut s: ModelState<f32> = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
                s.optimizer = None;
                s
            }
            None => ModelState::init(cfg.model)?,
        };
        if let Some(l) = &cfg.lora {
            s.attach_lora(l)?;
        }
        s
    };
    cfg.model = state.config;

    let texts = read_jsonl(&train_path)?;
    let examples: Vec<TrainExample> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            TrainExample::from_text(t, &cfg.template, cfg.optim.loss_region)
                .with_context(|| format!("{} record {}", train_path.display(), i + 1))
        })
        .collect::<Result<_>>()?;
    let val = match &cfg.val_data {
        Some(p) => load_samples(p, None, &cfg.template)?,
        None => Vec::new(),
    };

    let mut monitor = TrainingMonitor::new(&val, cfg.val_cap, cfg.template.clone(), cfg.decode.clone());
    let mut monitor_err = None;
    let state = train_model(state, &examples, &cfg.optim, |info, st| {
        if monitor_err.is_some() {
            return;
        }
        match monitor.observe(info, st) {
            Ok(r) => log::info!(
                "iter {} loss {:.4} val_mae {}",
                r.iter,
                r.mean_loss,
                r.val_mae_m.map_or("-".to_string(), |m| m.to_string())
            ),
            Err(e) => monitor_err = Some(e),
        }
    })?;
    if let Some(e) = monitor_err {
        return Err(e.into());
    }

    let mut run = RunDir::create(&out)?;
    save_checkpoint(&state, &run.file("model.ckpt"))?;
    run.write_text("monitor.jsonl", &monitor.to_jsonl()?)?;
    let steps = state.optimizer.as_ref().map_or(0, |o| o.step);
    println!(
        "trained {} parameters to step {steps}; checkpoint {}",
        state.trainable_params(),
        out.join("model.ckpt").display()
    );
    run.finish("train", seed, &cfg)
}
