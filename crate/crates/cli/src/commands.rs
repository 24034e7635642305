use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fgstformer::checkpoint::Checkpoint;
use fgstformer::data::{
    generate_dataset, read_sample, write_manifest, write_sample, DatasetSpec,
    ManifestEntry, SkeletonLayout, Split,
};
use fgstformer::io::write_atomic;
use fgstformer::model::{argmax, fuse_streams, softmax};
use fgstformer::train::{evaluate, preprocess, train, Dataset};
use fgstformer::{Error, ExecMode, Model, Result, Tensor};

use crate::experiment::{parse_streams, Experiment};
use crate::staging::staged_dir;
use crate::{Cli, Command, TrainArgs};

pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const EXPERIMENT_NAME: &str = "experiment.toml";

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenData { config, out } => gen_data(config.as_deref(), &out, seed.unwrap_or(0)),
        Command::Train(args) => train_cmd(&args, seed),
        Command::Eval {
            checkpoints,
            manifest,
            split,
            out,
        } => eval_cmd(&checkpoints, &manifest, &split, out.as_deref()),
        Command::Infer {
            checkpoints,
            sample,
        } => infer_cmd(&checkpoints, &sample),
        Command::Inspect {
            checkpoint,
            sample,
            out,
        } => inspect_cmd(&checkpoint, &sample, &out),
    }
}

fn gen_data(config: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let spec = match config {
        Some(path) => DatasetSpec::from_toml(&std::fs::read_to_string(path)?)?,
        None => DatasetSpec::standard(100, 32, 0.01),
    };
    let samples = generate_dataset(&spec, seed, ExecMode::Parallel)?;
    let mut counts = vec![[0usize; 2]; spec.classes.len()];
    staged_dir(out, |dir| {
        std::fs::create_dir(dir.join("samples"))?;
        let mut entries = Vec::with_capacity(samples.len());
        for (i, (seq, split)) in samples.iter().enumerate() {
            let rel = PathBuf::from("samples").join(format!(
                "{}-{:05}.fgsk",
                spec.classes[seq.label()],
                i
            ));
            write_sample(&dir.join(&rel), seq)?;
            counts[seq.label()][usize::from(*split == Split::Eval)] += 1;
            entries.push(ManifestEntry {
                path: rel,
                label: seq.label(),
                split: *split,
            });
        }
        write_manifest(&dir.join(MANIFEST_NAME), &entries)
    })?;
    println!("class\tlabel\ttrain\teval");
    for (label, (name, c)) in spec.classes.iter().zip(&counts).enumerate() {
        println!("{name}\t{label}\t{}\t{}", c[0], c[1]);
    }
    println!("manifest\t{}", out.join(MANIFEST_NAME).display());
    Ok(())
}

fn train_cmd(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut exp = Experiment::load(&args.config)?;
    exp.apply_overrides(
        args.variant.as_deref(),
        args.temporal.as_deref(),
        args.stages.as_deref(),
    )?;
    if let Some(seed) = seed {
        exp.train.seed = seed;
    }
    let seed = exp.train.seed;
    let streams = match &args.streams {
        Some(s) => parse_streams(s)?,
        None => vec![exp.model.stream],
    };
    let layout = SkeletonLayout::builtin(&exp.model.layout)?;
    // load everything before touching the output directory
    let mut jobs = Vec::new();
    for &stream in &streams {
        let mut e = exp.clone();
        e.model.stream = stream;
        let train_set = Dataset::from_manifest(&e.model, &layout, &args.manifest, Some(Split::Train))?;
        let eval_set = Dataset::from_manifest(&e.model, &layout, &args.manifest, Some(Split::Eval))?;
        if train_set.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} lists no training samples",
                args.manifest.display()
            )));
        }
        let model = Model::new(&e.model, seed)?;
        jobs.push((e, model, train_set, eval_set));
    }
    let nested = jobs.len() > 1;
    staged_dir(&args.out, |root| {
        println!("stream\tepoch\tsplit\tloss\taccuracy\tlr");
        for (e, mut model, train_set, eval_set) in jobs {
            let name = e.model.stream.name();
            let dir = if nested { root.join(name) } else { root.to_path_buf() };
            std::fs::create_dir_all(&dir)?;
            write_atomic(&dir.join(EXPERIMENT_NAME), e.to_toml()?.as_bytes())?;
            let report = train(
                &mut model,
                &train_set,
                &eval_set,
                &e.train,
                Some(&dir),
                &mut |m| {
                    println!(
                        "{name}\t{}\t{}\t{:.6}\t{:.4}\t{}",
                        m.epoch, m.split, m.loss, m.accuracy, m.lr
                    )
                },
            )?;
            println!(
                "{name}\tbest\tepoch {}\taccuracy {:.4}",
                report.best_epoch, report.best_accuracy
            );
        }
        Ok(())
    })
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<Model>> {
    let models = paths
        .iter()
        .map(|p| Checkpoint::read(p)?.into_model())
        .collect::<Result<Vec<_>>>()?;
    let first = models[0].config();
    for (m, p) in models.iter().zip(paths).skip(1) {
        let c = m.config();
        if c.classes != first.classes || c.layout != first.layout {
            return Err(Error::Config(format!(
                "incompatible checkpoints: {} has {} classes on `{}`, {} has {} on `{}`",
                paths[0].display(),
                first.classes,
                first.layout,
                p.display(),
                c.classes,
                c.layout
            )));
        }
    }
    Ok(models)
}

fn eval_cmd(paths: &[PathBuf], manifest: &Path, split: &str, out: Option<&Path>) -> Result<()> {
    let split = match split {
        "all" => None,
        s => Some(s.parse::<Split>().map_err(|_| {
            Error::InvalidArgument(format!("--split must be train, eval or all, got `{s}`"))
        })?),
    };
    let models = load_models(paths)?;
    let layout = SkeletonLayout::builtin(&models[0].config().layout)?;
    let mut columns = Vec::new();
    let mut logits = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let data = Dataset::from_manifest(m.config(), &layout, manifest, split)?;
        let ev = evaluate(m, &data, ExecMode::Parallel)?;
        labels = data.examples().iter().map(|e| e.label).collect();
        columns.push(format!("{i}:{}", m.config().stream));
        logits.push(ev.logits);
    }
    let mut predictions: Vec<Vec<usize>> = logits
        .iter()
        .map(|set| set.iter().map(|z| argmax(z)).collect())
        .collect();
    if models.len() > 1 {
        let fused = (0..labels.len())
            .map(|k| {
                let per: Vec<Vec<f64>> = logits.iter().map(|set| set[k].clone()).collect();
                fuse_streams(&per).map(|f| argmax(&f))
            })
            .collect::<Result<Vec<_>>>()?;
        predictions.push(fused);
        columns.push("fused".into());
    }
    let classes = models[0].config().classes;
    let table = class_table(&columns, &predictions, &labels, classes);
    let n = labels.len() as f64;
    for (col, pred) in columns.iter().zip(&predictions) {
        let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        println!("accuracy\t{col}\t{}", correct as f64 / n);
    }
    match out {
        Some(path) => write_atomic(path, table.as_bytes())?,
        None => print!("{table}"),
    }
    Ok(())
}

/// Per-class top-1 accuracy, one column per prediction set, with a closing
/// `all` row.
fn class_table(columns: &[String], predictions: &[Vec<usize>], labels: &[usize], classes: usize) -> String {
    let mut out = String::from("class\tcount");
    for c in columns {
        let _ = write!(out, "\t{c}");
    }
    out.push('\n');
    let mut rows: Vec<usize> = (0..classes).collect();
    rows.push(usize::MAX);
    for class in rows {
        let idx: Vec<usize> = (0..labels.len())
            .filter(|&k| class == usize::MAX || labels[k] == class)
            .collect();
        if class == usize::MAX {
            out.push_str("all");
        } else {
            let _ = write!(out, "{class}");
        }
        let _ = write!(out, "\t{}", idx.len());
        for pred in predictions {
            let correct = idx.iter().filter(|&&k| pred[k] == labels[k]).count();
            let acc = if idx.is_empty() { 0.0 } else { correct as f64 / idx.len() as f64 };
            let _ = write!(out, "\t{acc}");
        }
        out.push('\n');
    }
    out
}

fn sample_input(model: &Model, path: &Path) -> Result<Tensor> {
    let seq = read_sample(path)?;
    let config = model.config();
    if seq.layout_id() != config.layout {
        return Err(Error::LayoutMismatch(format!(
            "{} uses layout `{}`, checkpoint expects `{}`",
            path.display(),
            seq.layout_id(),
            config.layout
        )));
    }
    let layout = SkeletonLayout::builtin(&config.layout)?;
    // labels are irrelevant for inference
    let seq = seq.with_label(0);
    let ex = preprocess(&seq, &layout, config)?;
    Tensor::new(ex.input, &[config.joints, config.frames, config.in_channels])
}

fn infer_cmd(paths: &[PathBuf], sample: &Path) -> Result<()> {
    let models = load_models(paths)?;
    let per = models
        .iter()
        .map(|m| m.logits(&sample_input(m, sample)?))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = if per.len() == 1 {
        softmax(&per[0])
    } else {
        let n = per.len() as f64;
        fuse_streams(&per)?.into_iter().map(|v| v / n).collect()
    };
    println!("class\tprobability");
    for (c, p) in scores.iter().enumerate() {
        println!("{c}\t{p}");
    }
    println!("prediction\t{}", argmax(&scores));
    Ok(())
}

fn inspect_cmd(checkpoint: &Path, sample: &Path, out: &Path) -> Result<()> {
    let model = Checkpoint::read(checkpoint)?.into_model()?;
    let x = sample_input(&model, sample)?;
    let record = model
        .forward(&x)?
        .record
        .ok_or_else(|| Error::InvalidArgument("forward pass produced no attention record".into()))?;
    record.write(out)?;
    println!("layers\t{}", record.layers.len());
    println!("maps\t{}", record.maps().count());
    println!("prediction\t{}", argmax(&record.logits));
    println!("record\t{}", out.display());
    Ok(())
}
