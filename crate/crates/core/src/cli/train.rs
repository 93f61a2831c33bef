use std::fmt::Write as _;

use serde_json::json;
use superexpressive::nntrain::{ingest_csv, occlusion_map, train, window_starts, CsvSchema, Model, TrainConfig};

use super::manifest::Recorder;
use super::{CliResult, Failure};
use crate::{OccludeArgs, TrainArgs};

pub fn run(args: &TrainArgs, argv: &[String]) -> CliResult {
    let cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let data = cfg.dataset()?;
    let (train_set, test_set) = data.split(cfg.test_fraction, cfg.seed)?;
    let outcome = train(&train_set, &test_set, &cfg)?;

    let config = json!({ "train": cfg, "config_file": args.config.as_ref().map(|p| p.display().to_string()) });
    let mut rec = Recorder::new("train", argv, cfg.seed, config);
    let dir = &args.out;
    rec.write(&dir.join("config.txt"), cfg.to_text())?;
    rec.write(&dir.join("model.json"), outcome.model.to_json())?;
    rec.write(&dir.join("history.csv"), outcome.history.to_csv())?;
    rec.write(&dir.join("test_set.csv"), test_set.to_csv())?;
    rec.finish()?;

    if let Some((epoch, message)) = outcome.diverged {
        return Err(Failure::Search(format!(
            "training diverged at epoch {epoch}: {message}; wrote the last finite checkpoint"
        )));
    }
    if let Some(last) = outcome.history.epochs.last() {
        println!(
            "trained {} epochs: loss {:.4e}, acc {:.4}, val_acc {:.4}",
            last.epoch, last.loss, last.acc, last.val_acc
        );
    }
    Ok(())
}

pub fn occlude(args: &OccludeArgs, argv: &[String]) -> CliResult {
    let text = std::fs::read_to_string(&args.model).map_err(|e| super::manifest::io_failure(&args.model, e))?;
    let model = Model::from_json(&text)?;
    let schema = CsvSchema { length: Some(model.input_len()), classes: Some(model.classes()) };
    let data = ingest_csv(&args.dataset, &schema)?;
    let starts = window_starts(model.input_len(), args.window, args.stride)?;
    let n = args.limit.map_or(data.len(), |l| l.min(data.len()));

    let mut csv = String::from("sample,label,window,start,end,drop\n");
    for i in 0..n {
        let drops = occlusion_map(&model, &data.signals[i], data.labels[i], args.window, args.stride)?;
        for (k, (&s, d)) in starts.iter().zip(drops).enumerate() {
            let _ = writeln!(csv, "{i},{},{k},{s},{},{d}", data.labels[i], s + args.window);
        }
    }
    let config = json!({
        "model": args.model.display().to_string(),
        "dataset": args.dataset.display().to_string(),
        "window": args.window,
        "stride": args.stride,
        "samples": n,
    });
    let mut rec = Recorder::new("occlude", argv, 0, config);
    rec.write(&args.out, csv)?;
    rec.finish()?;
    println!("occluded {n} signals with {} windows each", starts.len());
    Ok(())
}
