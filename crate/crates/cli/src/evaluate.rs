use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use telemetry_gpt::baselines::{fit_ftm, fit_pathloss, pathloss_invert, KnnModel};
use telemetry_gpt::decode::DecodeConfig;
use telemetry_gpt::evalsuite::{
    ablation_run, cdf_csv, cdf_svg, percentile_table, predict_all, summary_table, CdfCurve, EvalReport,
};
use telemetry_gpt::gptcore::{load_checkpoint, ModelState};
use telemetry_gpt::promptcodec::PromptTemplate;
use telemetry_gpt::telemetry::{FeatureMask, TelemetrySample};

use crate::config::{read_config_file, resolve, resolve_seed, Overrides, RunDir};
use crate::data::load_samples;
use crate::pipeline::need;
use crate::{AblateArgs, BaselineArgs, BaselineMethod, DumpVocabArgs, EvalArgs, Global, ReportArgs};

fn model_tag(state: &ModelState<f32>) -> String {
    let c = &state.config;
    let mut tag = format!("{}L-{}d", c.n_layers, c.d_model);
    if let Some(a) = &state.adapter {
        let _ = write!(tag, "+lora{}", a.rank);
    }
    tag
}

/// Writes `<stem>.csv` for one report (header only when nothing aligned).
fn write_cdf(run: &mut RunDir, stem: &str, report: &EvalReport) -> Result<Option<CdfCurve>> {
    let curve = report.cdf();
    let csv = curve.as_ref().map_or_else(|| "error_m,cum_prob\n".to_string(), cdf_csv);
    run.write_text(&format!("{stem}.csv"), &csv)?;
    Ok(curve)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRun {
    seed: u64,
    checkpoint: PathBuf,
    test: PathBuf,
    labels: Option<PathBuf>,
    out_dir: PathBuf,
    tag: String,
    threads: usize,
    masks: Option<Vec<FeatureMask>>,
    decode: DecodeConfig,
    template: PromptTemplate,
}

fn resolve_eval(g: &Global, a: EvalArgs, masks: Option<Vec<FeatureMask>>) -> Result<EvalRun> {
    let file = read_config_file(g.config.as_deref())?;
    let seed = resolve_seed(g.seed, &file)?;
    let defaults = EvalRun {
        seed,
        checkpoint: PathBuf::new(),
        test: PathBuf::new(),
        labels: None,
        out_dir: PathBuf::new(),
        tag: String::new(),
        threads: 1,
        masks: None,
        decode: DecodeConfig::default(),
        template: PromptTemplate::default(),
    };
    let mut o = Overrides::default();
    o.set("checkpoint", a.checkpoint)
        .set("test", a.test)
        .set("labels", a.labels)
        .set("out_dir", a.out)
        .set("tag", a.tag)
        .set("threads", g.threads)
        .set("masks", masks)
        .set("decode.max_new_tokens", a.max_new_tokens);
    let mut cfg: EvalRun = resolve(&defaults, &file, o)?;
    cfg.seed = seed;
    cfg.decode = cfg.decode.clone().with_seed(seed);
    cfg.template.validate()?;
    if cfg.threads == 0 {
        bail!("--threads must be at least 1");
    }
    Ok(cfg)
}

fn load_for_eval(cfg: &EvalRun) -> Result<(ModelState<f32>, Vec<TelemetrySample>)> {
    let ckpt = need(&cfg.checkpoint, "--checkpoint")?;
    let state = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let test = load_samples(need(&cfg.test, "--test")?, cfg.labels.as_deref(), &cfg.template)?;
    Ok((state, test))
}

pub fn eval(g: &Global, a: EvalArgs) -> Result<()> {
    let mut cfg = resolve_eval(g, a, None)?;
    let (state, test) = load_for_eval(&cfg)?;
    if cfg.tag.is_empty() {
        cfg.tag = model_tag(&state);
    }
    let mut run = RunDir::create(need(&cfg.out_dir, "--out")?)?;

    let preds = predict_all(&state, &test, &cfg.template, &cfg.decode, cfg.threads)?;
    let labels: Vec<f64> = test.iter().map(TelemetrySample::label_m).collect();
    let values: Vec<Option<f64>> = preds.iter().map(|p| p.parsed.value()).collect();
    let report = EvalReport::from_predictions(&cfg.tag, &labels, &values)?;

    let mut lines = String::new();
    for (i, (p, y)) in preds.iter().zip(&labels).enumerate() {
        let row = json!({
            "index": i,
            "label_m": y,
            "raw_text": p.raw_text,
            "predicted_m": p.parsed.value(),
            "misaligned": p.parsed.is_misaligned(),
            "latency_tokens": p.latency_tokens,
        });
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    run.write_text("predictions.jsonl", &lines)?;
    run.write_json("report.json", &report)?;
    let curve = write_cdf(&mut run, "cdf", &report)?;
    let curves: Vec<(String, CdfCurve)> = curve.into_iter().map(|c| (cfg.tag.clone(), c)).collect();
    run.write_text("cdf.svg", &cdf_svg(&curves, "CDF of localization error"))?;
    print!("{}", summary_table(std::slice::from_ref(&report)));
    run.finish("eval", cfg.seed, &cfg)
}

pub fn ablate(g: &Global, a: AblateArgs) -> Result<()> {
    let cfg = resolve_eval(g, a.eval, a.masks)?;
    let masks = cfg.masks.clone().unwrap_or_else(|| FeatureMask::ALL.to_vec());
    if masks.is_empty() {
        bail!("no masks to evaluate");
    }
    let (state, test) = load_for_eval(&cfg)?;
    let mut run = RunDir::create(need(&cfg.out_dir, "--out")?)?;

    let results = ablation_run(&state, &test, &masks, &cfg.template, &cfg.decode, &cfg.tag, cfg.threads)?;
    let mut curves = Vec::new();
    let mut reports = Vec::new();
    for r in results {
        let tag = r.mask.tag();
        run.write_json(&format!("report_{tag}.json"), &r.report)?;
        if let Some(c) = write_cdf(&mut run, &format!("cdf_{tag}"), &r.report)? {
            curves.push((r.report.config_tag.clone(), c));
        }
        reports.push(r.report);
    }
    run.write_text("cdf.svg", &cdf_svg(&curves, "CDF of localization error by feature set"))?;
    let summary = format!("{}\n{}", summary_table(&reports), percentile_table(&reports));
    run.write_text("summary.txt", &summary)?;
    print!("{summary}");
    run.finish("ablate", cfg.seed, &cfg)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineRun {
    seed: u64,
    method: BaselineMethod,
    train_data: PathBuf,
    train_labels: Option<PathBuf>,
    test: PathBuf,
    labels: Option<PathBuf>,
    out_dir: PathBuf,
    k: usize,
    ap: u32,
    tag: String,
    template: PromptTemplate,
}

/// Reading of AP `ap` for the single-AP fits; `None` when it is absent.
fn ap_reading(s: &TelemetrySample, ap: u32, rssi: bool) -> Result<Option<f64>> {
    let f = s.as_ftm_rssi().context("path-loss and FTM baselines need FTM/RSSI samples")?;
    Ok(f.aps.iter().find(|r| r.ap_id == ap).and_then(|r| if rssi { r.rssi_dbm } else { r.ftm_ns }))
}

pub fn baseline(g: &Global, a: BaselineArgs) -> Result<()> {
    let file = read_config_file(g.config.as_deref())?;
    let seed = resolve_seed(g.seed, &file)?;
    let defaults = BaselineRun {
        seed,
        method: BaselineMethod::Knn,
        train_data: PathBuf::new(),
        train_labels: None,
        test: PathBuf::new(),
        labels: None,
        out_dir: PathBuf::new(),
        k: 5,
        ap: 1,
        tag: String::new(),
        template: PromptTemplate::default(),
    };
    let mut o = Overrides::default();
    o.set("method", a.method)
        .set("train_data", a.train_data)
        .set("train_labels", a.train_labels)
        .set("test", a.test)
        .set("labels", a.labels)
        .set("out_dir", a.out)
        .set("k", a.k)
        .set("ap", a.ap)
        .set("tag", a.tag);
    let mut cfg: BaselineRun = resolve(&defaults, &file, o)?;
    cfg.seed = seed;
    if cfg.tag.is_empty() {
        cfg.tag = match cfg.method {
            BaselineMethod::Knn => format!("knn-k{}", cfg.k),
            BaselineMethod::Pathloss => format!("pathloss-ap{}", cfg.ap),
            BaselineMethod::Ftm => format!("ftm-ap{}", cfg.ap),
        };
    }
    let train = load_samples(need(&cfg.train_data, "--train")?, cfg.train_labels.as_deref(), &cfg.template)?;
    let test = load_samples(need(&cfg.test, "--test")?, cfg.labels.as_deref(), &cfg.template)?;
    let mut run = RunDir::create(need(&cfg.out_dir, "--out")?)?;

    let preds: Vec<Option<f64>> = match cfg.method {
        BaselineMethod::Knn => {
            let model = KnnModel::fit(&train, cfg.k)?;
            run.write_json("model.json", &json!({ "k": model.k, "space": model.space }))?;
            test.iter().map(|s| model.predict(s).map(Some)).collect::<Result<_, _>>()?
        }
        BaselineMethod::Pathloss | BaselineMethod::Ftm => {
            let rssi = cfg.method == BaselineMethod::Pathloss;
            let mut pairs = Vec::new();
            for s in &train {
                if let Some(v) = ap_reading(s, cfg.ap, rssi)? {
                    pairs.push((v, s.label_m()));
                }
            }
            let predict: Box<dyn Fn(f64) -> f64> = if rssi {
                let fit = fit_pathloss(&pairs)?;
                run.write_json("model.json", &fit)?;
                Box::new(move |v| pathloss_invert(&fit, v))
            } else {
                let fit = fit_ftm(&pairs)?;
                run.write_json("model.json", &fit)?;
                Box::new(move |v| fit.predict(v))
            };
            test.iter().map(|s| Ok(ap_reading(s, cfg.ap, rssi)?.map(&predict))).collect::<Result<_>>()?
        }
    };
    let labels: Vec<f64> = test.iter().map(TelemetrySample::label_m).collect();
    let report = EvalReport::from_predictions(&cfg.tag, &labels, &preds)?;
    run.write_json("report.json", &report)?;
    let curve = write_cdf(&mut run, "cdf", &report)?;
    let curves: Vec<(String, CdfCurve)> = curve.into_iter().map(|c| (cfg.tag.clone(), c)).collect();
    run.write_text("cdf.svg", &cdf_svg(&curves, "CDF of localization error"))?;
    print!("{}", summary_table(std::slice::from_ref(&report)));
    run.finish("baseline", seed, &cfg)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportRun {
    seed: u64,
    inputs: Vec<PathBuf>,
    out_dir: PathBuf,
    title: String,
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn report(g: &Global, a: ReportArgs) -> Result<()> {
    let file = read_config_file(g.config.as_deref())?;
    let seed = resolve_seed(g.seed, &file)?;
    let defaults =
        ReportRun { seed, inputs: Vec::new(), out_dir: PathBuf::new(), title: "CDF of localization error".into() };
    let mut o = Overrides::default();
    o.set("inputs", (!a.inputs.is_empty()).then_some(a.inputs)).set("out_dir", a.out).set("title", a.title);
    let mut cfg: ReportRun = resolve(&defaults, &file, o)?;
    cfg.seed = seed;
    if cfg.inputs.is_empty() {
        bail!("missing --input");
    }
    let reports: Vec<EvalReport> = cfg.inputs.iter().map(|p| read_report(p)).collect::<Result<_>>()?;
    let mut run = RunDir::create(need(&cfg.out_dir, "--out")?)?;
    let curves: Vec<(String, CdfCurve)> =
        reports.iter().filter_map(|r| r.cdf().map(|c| (r.config_tag.clone(), c))).collect();
    run.write_text("cdf.svg", &cdf_svg(&curves, &cfg.title))?;
    let summary = format!("{}\n{}", summary_table(&reports), percentile_table(&reports));
    run.write_text("summary.txt", &summary)?;
    print!("{summary}");
    run.finish("report", seed, &cfg)
}

pub fn dump_vocab(a: DumpVocabArgs) -> Result<()> {
    let mut out = String::new();
    for (id, shown) in PromptTemplate::default().vocab().table() {
        let _ = writeln!(out, "{id}\t{shown}");
    }
    if let Some(p) = &a.out {
        std::fs::write(p, &out).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{out}");
    Ok(())
}
