use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use truce::baselines::{train_baseline, BaselineConfig, EncoderKind, NearNbr};
use truce::captioner::Captioner;
use truce::data::{
    convert_released, gen_synth_dataset, load_dataset, load_price_dir, sample_stock_windows,
    write_dataset, PairedDataset, Record, Split, ALL_CLASSES, HOLDOUT_CLASSES, HOLDOUT_TRAIN_CLASSES,
};
use truce::eval::{
    composition_eval, coverage_curve, coverage_svg, evaluate, length_transfer_eval, module_word_table,
    transfer_dataset, TRANSFER_LEN,
};
use truce::exec::set_threads;
use truce::lexicon::HeuristicLexicon;
use truce::trainer::{train_truce, Checkpoint, EpochLog, LoadedModel, Manifest, TrainConfig};

use crate::config::RunConfig;
use crate::{
    Ablation, CaptionArgs, Cli, Command, ConvertArgs, EvalArgs, IngestArgs, Mode, ModelChoice, RuntimeFailure,
    Suite, SynthGenArgs, TrainArgs, UsageError,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::SynthGen(a) => synth_gen(cfg, a),
        Command::Ingest(a) => ingest(cfg, a),
        Command::Convert(a) => convert(a),
        Command::Train(a) => train(cfg, a),
        Command::Caption(a) => caption(cfg, a),
        Command::Eval(a) => eval(cfg, a),
    }
}

/// First line of every JSONL artifact.
fn header<C: Serialize>(command: &str, config: &C) -> serde_json::Value {
    json!({
        "type": "config",
        "tool_version": VERSION,
        "command": command,
        "config": config,
    })
}

fn put<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(UsageError(format!("{} exists; pass --force to overwrite", path.display())).into());
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// Datasets keep their strict line format, so the resolved config goes next to them.
fn write_sidecar<C: Serialize>(path: &Path, command: &str, config: &C) -> Result<()> {
    let mut w = create(&sidecar(path))?;
    serde_json::to_writer_pretty(&mut w, &header(command, config))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn synth_gen(mut cfg: RunConfig, a: SynthGenArgs) -> Result<()> {
    let d = &mut cfg.data;
    d.n = a.n.unwrap_or(d.n);
    d.t = a.t.unwrap_or(d.t);
    d.classes = a.classes.unwrap_or(d.classes);
    d.seed = a.seed.unwrap_or(d.seed);
    let classes: &[_] = match d.classes {
        6 => &ALL_CLASSES,
        4 => &HOLDOUT_TRAIN_CLASSES,
        2 => &HOLDOUT_CLASSES,
        k => return Err(UsageError(format!("--classes must be 6, 4 or 2, got {k}")).into()),
    };
    refuse_existing(&a.out, a.force)?;
    let records = gen_synth_dataset(d.n, d.t, classes, d.seed)?;
    let mut w = create(&a.out)?;
    write_dataset(&records, &mut w)?;
    w.flush()?;
    write_sidecar(&a.out, "synth-gen", &cfg.data)?;

    let mut hist: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for r in &records {
        let m = r.meta.as_ref().expect("synthetic records carry metadata");
        hist.entry(format!("{}-{}", m.trend, m.location)).or_default()[r.split as usize] += 1;
    }
    println!("{:<16} {:>6} {:>6} {:>6}", "class", "train", "dev", "test");
    for (class, c) in &hist {
        println!("{class:<16} {:>6} {:>6} {:>6}", c[0], c[1], c[2]);
    }
    println!("wrote {} series to {}", records.len(), a.out.display());
    Ok(())
}

fn ingest(mut cfg: RunConfig, a: IngestArgs) -> Result<()> {
    let d = &mut cfg.data;
    d.count = a.count.unwrap_or(d.count);
    d.t = a.t.unwrap_or(d.t);
    d.seed = a.seed.unwrap_or(d.seed);
    refuse_existing(&a.out, a.force)?;
    let sources = load_price_dir(&a.csv_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let (windows, abandoned) = sample_stock_windows(&sources, d.t, d.count, &mut rng)?;
    if abandoned > 0 {
        warn!("{abandoned} draws abandoned (no room or degenerate window) and redrawn");
    }
    let mut w = create(&a.out)?;
    put(&mut w, &header("ingest", &json!({ "data": &cfg.data, "csv_dir": a.csv_dir })))?;
    for (i, win) in windows.iter().enumerate() {
        put(
            &mut w,
            &json!({
                "type": "window",
                "id": format!("stock-{i:05}"),
                "series": win.series,
                "provenance": win.provenance,
            }),
        )?;
    }
    w.flush()?;
    println!(
        "wrote {} windows of length {} from {} price files to {}",
        windows.len(),
        cfg.data.t,
        sources.len(),
        a.out.display()
    );
    Ok(())
}

fn convert(a: ConvertArgs) -> Result<()> {
    refuse_existing(&a.out, a.force)?;
    let paths: Vec<&Path> = a.released.iter().map(PathBuf::as_path).collect();
    let records = convert_released(&paths)?;
    let mut w = create(&a.out)?;
    write_dataset(&records, &mut w)?;
    w.flush()?;
    write_sidecar(&a.out, "convert", &json!({ "released": a.released }))?;
    let captions: usize = records.iter().map(|r| r.captions.len()).sum();
    println!("converted {} series with {captions} captions to {}", records.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainHeader<'a> {
    data: &'a Path,
    model: String,
    ablations: Vec<String>,
    train: &'a TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<&'a BaselineConfig>,
}

fn train(cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let mut tc = cfg.train_config();
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.adam.lr = a.lr.unwrap_or(tc.adam.lr);
    tc.seed = a.seed.unwrap_or(tc.seed);
    tc.patience = a.patience.unwrap_or(tc.patience);
    tc.w_aux = a.w_aux.unwrap_or(tc.w_aux);
    tc.lexicon = a.lexicon.unwrap_or(tc.lexicon);
    if !a.lambda.is_empty() {
        tc.lambdas = a.lambda.clone();
    }
    for ab in &a.ablate {
        match ab {
            Ablation::Noinf => tc.ablations.no_inference_net = true,
            Ablation::Noheur => tc.ablations.no_heuristic = true,
        }
    }
    let is_truce = matches!(a.model, ModelChoice::Truce | ModelChoice::TruceD);
    if !is_truce && !a.ablate.is_empty() {
        return Err(UsageError("--ablate applies to truce and truce-d only".into()).into());
    }
    if a.model == ModelChoice::TruceD {
        tc.ablations.direct_conditioning = true;
    }
    let ds = load_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".metrics.jsonl");
        PathBuf::from(s)
    });
    let model_name = format!("{:?}", a.model).to_lowercase().replace("truced", "truce-d");
    let ablations: Vec<String> = a.ablate.iter().map(|x| format!("{x:?}").to_lowercase()).collect();

    let (ckpt, log, summary, diverged) = match a.model {
        ModelChoice::Truce | ModelChoice::TruceD => {
            let r = train_truce(&tc, &ds)?;
            let summary = json!({
                "type": "result",
                "lambda": r.lambda,
                "dev_bleu4": finite(r.dev_bleu4),
                "prediction_params": r.model.prediction_params(),
                "diverged": r.diverged,
            });
            (Checkpoint::from_truce(&r.model, &tc), r.log, summary, r.diverged)
        }
        ModelChoice::Nearnbr => {
            let m = NearNbr::new(&ds, tc.seed)?;
            let summary = json!({ "type": "result", "train_series": ds.split(Split::Train).len() });
            (Checkpoint::from_nearnbr(&m), Vec::new(), summary, None)
        }
        kind => {
            let kind = match kind {
                ModelChoice::Fc => EncoderKind::Fc,
                ModelChoice::Lstm => EncoderKind::Lstm,
                ModelChoice::Conv => EncoderKind::Conv,
                _ => EncoderKind::Fft,
            };
            let bc = BaselineConfig {
                kind,
                hidden: a.hidden.or(cfg.baseline.hidden),
                w_cls: if a.w_cls.is_empty() { cfg.baseline.w_cls.clone() } else { a.w_cls.clone() },
                train: tc.clone(),
            };
            let r = train_baseline(&bc, &ds)?;
            let summary = json!({
                "type": "result",
                "hidden": r.config.hidden,
                "w_cls": r.model.w_cls,
                "dev_bleu4": finite(r.dev_bleu4),
                "prediction_params": r.model.prediction_params(),
                "parity_target": r.parity_target,
                "diverged": r.diverged,
            });
            (Checkpoint::from_baseline(&r.model, &r.config), r.log, summary, r.diverged)
        }
    };

    ckpt.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let baseline_cfg = match &ckpt.manifest.model {
        truce::trainer::ModelSpec::Baseline { train, .. } => Some(train),
        _ => None,
    };
    let mut w = create(&log_path)?;
    put(
        &mut w,
        &header(
            "train",
            &TrainHeader {
                data: &a.data,
                model: model_name,
                ablations,
                train: &tc,
                baseline: baseline_cfg,
            },
        ),
    )?;
    for e in &log {
        put(&mut w, &EpochLine { kind: "epoch", e })?;
    }
    put(&mut w, &summary)?;
    w.flush()?;
    info!("checkpoint {}, log {}", a.out.display(), log_path.display());
    if let Some(d) = diverged {
        return Err(RuntimeFailure(format!("training diverged ({d}); kept the last good model")).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EpochLine<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    e: &'a EpochLog,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn load_model(path: &Path) -> Result<(Manifest, LoadedModel)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let manifest = ckpt.manifest.clone();
    Ok((manifest, ckpt.into_model()?))
}

/// Every word the data's captions use must be known to the checkpoint.
fn check_vocab(manifest: &Manifest, ds: &PairedDataset) -> Result<()> {
    let known: HashSet<&str> = manifest.vocab.tokens().iter().map(String::as_str).collect();
    let missing: Vec<&str> = ds
        .vocab
        .tokens()
        .iter()
        .map(String::as_str)
        .filter(|t| !known.contains(t))
        .collect();
    if !missing.is_empty() {
        let shown = missing.iter().take(8).copied().collect::<Vec<_>>().join(", ");
        return Err(truce::Error::VocabMismatch(format!(
            "{} training word(s) of the data are unknown to the checkpoint: {shown}",
            missing.len()
        ))
        .into());
    }
    Ok(())
}

fn load_checked(ckpt: &Path, data: &Path) -> Result<(Manifest, LoadedModel, PairedDataset)> {
    let (manifest, model) = load_model(ckpt)?;
    let ds = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;
    check_vocab(&manifest, &ds)?;
    Ok((manifest, model, ds))
}

fn apply_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        Some(0) => Err(UsageError("--threads must be positive".into()).into()),
        Some(n) => {
            set_threads(n);
            Ok(())
        }
        None => Ok(()),
    }
}

fn caption(cfg: RunConfig, a: CaptionArgs) -> Result<()> {
    apply_threads(a.threads)?;
    if !(a.top_p > 0.0 && a.top_p <= 1.0) {
        return Err(UsageError(format!("--top-p must be in (0, 1], got {}", a.top_p)).into());
    }
    let samples = a.l.unwrap_or(cfg.eval.samples);
    let seed = a.seed.unwrap_or(cfg.eval.seed);
    let (_, model, ds) = load_checked(&a.ckpt, &a.data)?;
    let m = model.captioner();
    let records = ds.split(a.split);
    if records.is_empty() {
        bail!("no {:?} records in {}", a.split, a.data.display());
    }
    let exec = cfg.train.exec;
    let indexed: Vec<(usize, &Record)> = records.iter().copied().enumerate().collect();
    let outs = exec.map(&indexed, |&(i, r)| -> truce::Result<Vec<truce::captioner::CaptionOutput>> {
        let x = m.adapt(&r.series);
        match a.mode {
            Mode::Greedy => Ok(vec![m.caption(&x)?]),
            Mode::Sample => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                (0..samples).map(|_| m.sample(&x, a.top_p, &mut rng)).collect()
            }
        }
    });
    let mut w = output(a.out.as_deref())?;
    let resolved = json!({
        "ckpt": a.ckpt,
        "data": a.data,
        "split": a.split,
        "mode": format!("{:?}", a.mode).to_lowercase(),
        "top_p": a.top_p,
        "l": samples,
        "seed": seed,
        "system": m.name(),
    });
    put(&mut w, &header("caption", &resolved))?;
    for (r, out) in records.iter().zip(outs) {
        for (k, o) in out?.into_iter().enumerate() {
            put(
                &mut w,
                &json!({
                    "type": "caption",
                    "id": r.id,
                    "sample": k,
                    "text": o.text,
                    "program": o.program,
                    "score": o.score,
                }),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    apply_threads(a.threads)?;
    let e = &mut cfg.eval;
    e.samples = a.l.unwrap_or(e.samples);
    e.seed = a.seed.unwrap_or(e.seed);
    e.top_k = a.top_k.unwrap_or(e.top_k);
    e.source = a.source.unwrap_or(e.source);
    if !a.top_p.is_empty() {
        e.top_p = a.top_p.clone();
    }
    if a.ckpt.len() > 1 && a.suite != Suite::Coverage {
        return Err(UsageError("only the coverage suite takes several checkpoints".into()).into());
    }
    if a.plot.is_some() && a.suite != Suite::Coverage {
        return Err(UsageError("--plot applies to the coverage suite only".into()).into());
    }
    let exec = cfg.train.exec;
    let resolved = json!({
        "suite": format!("{:?}", a.suite).to_lowercase(),
        "ckpt": a.ckpt,
        "data": a.data,
        "split": a.split,
        "eval": &cfg.eval,
    });
    let header = header("eval", &resolved);

    // The transfer suite may build its own data; every other suite needs a file.
    let data_path = match (&a.data, a.suite) {
        (Some(p), _) => Some(p.clone()),
        (None, Suite::Transfer) => None,
        (None, _) => return Err(UsageError(format!("--data is required for the {:?} suite", a.suite)).into()),
    };

    let mut w = output(a.out.as_deref())?;
    put(&mut w, &header)?;
    match a.suite {
        Suite::Metrics | Suite::Correctness => {
            let (manifest, model, ds) = load_checked(&a.ckpt[0], data_path.as_deref().unwrap())?;
            let records = nonempty(ds.split(a.split), a.split)?;
            if a.suite == Suite::Correctness && records.iter().any(|r| r.meta.is_none()) {
                bail!("the correctness suite needs pattern metadata, which this data lacks");
            }
            let lex = HeuristicLexicon::new(manifest.lexicon);
            let report = evaluate(model.captioner(), &records, &lex, exec)?;
            // The header is already out; write the rest without repeating it.
            let mut body = Vec::new();
            report.write_jsonl(&(), &mut body)?;
            let text = String::from_utf8(body)?;
            for line in text.lines().skip(1) {
                w.write_all(line.as_bytes())?;
                w.write_all(b"\n")?;
            }
            let s = &report.summary;
            eprintln!(
                "{}: bleu3 {:.4} bleu4 {:.4} rouge_l {:.4} cider {:.4} ppl {} correctness {}",
                s.system,
                s.bleu3,
                s.bleu4,
                s.rouge_l,
                s.cider,
                s.perplexity.map_or("-".into(), |p| format!("{p:.4}")),
                s.correctness.map_or("-".into(), |c| format!("{c:.4}")),
            );
        }
        Suite::Coverage => {
            let mut curves = Vec::new();
            for path in &a.ckpt {
                let (manifest, model, ds) = load_checked(path, data_path.as_deref().unwrap())?;
                let records = nonempty(ds.split(a.split), a.split)?;
                let lex = HeuristicLexicon::new(manifest.lexicon);
                let m = model.captioner();
                let pts = coverage_curve(m, &records, &lex, cfg.eval.samples, &cfg.eval.top_p, cfg.eval.seed, exec)?;
                for p in &pts {
                    put(
                        &mut w,
                        &json!({ "type": "coverage", "system": m.name(), "ckpt": path, "top_p": p.top_p,
                                 "correctness": p.correctness, "coverage": p.coverage }),
                    )?;
                    eprintln!(
                        "{} top_p {:.1}: correctness {:.4} coverage {:.4}",
                        m.name(),
                        p.top_p,
                        p.correctness,
                        p.coverage
                    );
                }
                curves.push((m.name(), pts));
            }
            if let Some(plot) = &a.plot {
                let mut f = create(plot)?;
                let comment = serde_json::to_string(&header)?.replace("--", "- -");
                writeln!(f, "<!-- {comment} -->")?;
                f.write_all(coverage_svg(&curves).as_bytes())?;
                f.flush()?;
            }
        }
        Suite::Transfer => {
            let (manifest, model) = load_model(&a.ckpt[0])?;
            let records: Vec<Record> = match &data_path {
                Some(p) => {
                    let ds = load_dataset(p)?;
                    check_vocab(&manifest, &ds)?;
                    ds.records
                }
                None => transfer_dataset(cfg.eval.seed)?,
            };
            let refs: Vec<&Record> = records.iter().collect();
            let lex = HeuristicLexicon::new(manifest.lexicon);
            let m = model.captioner();
            let c = length_transfer_eval(m, &refs, &lex, exec)?;
            let t = refs.first().map_or(TRANSFER_LEN, |r| r.series.len());
            put(
                &mut w,
                &json!({ "type": "transfer", "system": m.name(), "t": t, "instances": refs.len(), "correctness": c }),
            )?;
            eprintln!("{} at length {t}: correctness {c:.4} over {} series", m.name(), refs.len());
        }
        Suite::Composition | Suite::Analyze => {
            let (_, model, ds) = load_checked(&a.ckpt[0], data_path.as_deref().unwrap())?;
            let LoadedModel::Truce(m) = &model else {
                bail!("the {:?} suite needs a truce checkpoint", a.suite);
            };
            let records = nonempty(ds.split(a.split), a.split)?;
            if a.suite == Suite::Composition {
                let acc = composition_eval(m, &records)?;
                put(
                    &mut w,
                    &json!({ "type": "composition", "system": m.name(), "instances": records.len(), "accuracy": acc }),
                )?;
                eprintln!("{}: composition accuracy {acc:.4} over {} series", m.name(), records.len());
            } else {
                let table = module_word_table(m, &records, cfg.eval.source, cfg.eval.top_k)?;
                for row in &table {
                    put(&mut w, &json!({ "type": "module", "row": row }))?;
                    let words: Vec<&str> = row.words.iter().map(|(w, _)| w.as_str()).collect();
                    eprintln!("{:<8} {:<12} {}", row.kind, row.name, words.join(" "));
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn nonempty(records: Vec<&Record>, split: Split) -> Result<Vec<&Record>> {
    if records.is_empty() {
        bail!("the data has no {split:?} records");
    }
    Ok(records)
}
