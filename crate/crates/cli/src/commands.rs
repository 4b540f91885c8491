use crate::{Cli, CliError, CliResult, Command, Precision};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use tpn_core::analysis::{
    count_flops, count_params, latency_bench, reproduce_table1, sweep, write_frontier_csv, write_table1_csv,
    write_table1_markdown, BenchConfig, BenchMode, SweepConfig,
};
use tpn_core::cores::CoreSpec;
use tpn_core::head::{write_detections_csv, InferConfig};
use tpn_core::train::{
    evaluate, gen_dataset, load_checkpoint, save_checkpoint, toy_model, train, write_loss_csv, TrainConfig, TOY_EPOCHS,
    TOY_LR_SCALE,
};
use tpn_core::{Model, ModelSpec, Scalar};

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Describe => describe(cli),
        Command::Params => params(cli),
        Command::Flops { height, width } => flops(cli, *height, *width),
        Command::Bench {
            batch,
            size,
            iters,
            warmup,
            mode,
        } => {
            let cfg = BenchConfig {
                batch: *batch,
                size: *size,
                iters: *iters,
                warmup: *warmup,
                mode: mode.parse::<BenchMode>()?,
                seed: cli.seed,
            };
            match cli.precision {
                Precision::F32 => bench::<f32>(cli, &cfg),
                Precision::F64 => bench::<f64>(cli, &cfg),
            }
        }
        Command::Train { config, epochs } => {
            let cfg = train_config(cli, config.as_deref(), *epochs)?;
            match cli.precision {
                Precision::F32 => train_cmd::<f32>(cli, &cfg),
                Precision::F64 => train_cmd::<f64>(cli, &cfg),
            }
        }
        Command::Eval {
            checkpoint,
            scenes,
            size,
        } => match cli.precision {
            Precision::F32 => eval::<f32>(cli, checkpoint, *scenes, *size),
            Precision::F64 => eval::<f64>(cli, checkpoint, *scenes, *size),
        },
        Command::Sweep { grid } => {
            let cfg = sweep_config(cli, grid.as_deref())?;
            match cli.precision {
                Precision::F32 => sweep_cmd::<f32>(cli, &cfg),
                Precision::F64 => sweep_cmd::<f64>(cli, &cfg),
            }
        }
        Command::Table1 => table1(cli),
    }
}

fn required_model(cli: &Cli) -> CliResult<ModelSpec> {
    let path = cli
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --model <file>".into()))?;
    Ok(ModelSpec::load(path)?)
}

fn model_or_toy(cli: &Cli) -> CliResult<ModelSpec> {
    match &cli.model {
        Some(path) => Ok(ModelSpec::load(path)?),
        None => Ok(toy_model(CoreSpec::tpn(2, 2))),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn output(cli: &Cli, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(&cli.out)?;
    Ok(BufWriter::new(File::create(cli.out.join(name))?))
}

fn write_json(cli: &Cli, name: &str, value: &impl serde::Serialize) -> CliResult {
    let mut w = output(cli, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(tpn_core::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn describe(cli: &Cli) -> CliResult {
    let spec = required_model(cli)?;
    let model = Model::build(&spec)?;
    let rows = model.core.schedule(&model.registry);
    println!("{}: {} steps", spec.core.label(), rows.len());
    let mut w = output(cli, "schedule.csv")?;
    writeln!(w, "index,layer,stage,mode,op,level,sources,params")?;
    for r in &rows {
        let params: Vec<String> = r.params.iter().map(|(n, s)| format!("{n} {s}")).collect();
        let mode = serde_json::to_value(r.mode).map_err(tpn_core::Error::from)?;
        let mode = mode.as_str().unwrap_or_default().to_string();
        println!(
            "{:>4}  L{} {:<15} {:<10} {:<11} P{}  <- [{}]",
            r.index,
            r.layer,
            r.stage,
            mode,
            r.op,
            r.level,
            r.sources.join(", ")
        );
        for p in &params {
            println!("          {p}");
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},\"{}\"",
            r.index,
            r.layer,
            r.stage,
            mode,
            r.op,
            r.level,
            r.sources.join(" "),
            params.join("; ")
        )?;
    }
    w.flush()?;
    Ok(())
}

fn params(cli: &Cli) -> CliResult {
    let spec = required_model(cli)?;
    let t = count_params(&spec)?;
    println!("{}", t.model);
    for r in &t.rows {
        println!("  {:<10} {:>12}", r.module, r.count);
    }
    println!("  {:<10} {:>12}", "total", t.total);
    println!("  {:<10} {:>12}", "trainable", t.trainable);
    let mut w = output(cli, "params.csv")?;
    t.write_csv(&mut w)?;
    Ok(())
}

fn flops(cli: &Cli, h: usize, w: usize) -> CliResult {
    let spec = required_model(cli)?;
    let t = count_flops(&spec, h, w)?;
    println!("{} at {h}x{w}", t.model);
    for r in &t.rows {
        println!("  {:<10} {:>10.3} GFLOPs", r.module, r.count as f64 / 1e9);
    }
    println!("  {:<10} {:>10.3} GFLOPs", "total", t.total as f64 / 1e9);
    let mut out = output(cli, "flops.csv")?;
    t.write_csv(&mut out)?;
    Ok(())
}

fn bench<T: Scalar>(cli: &Cli, cfg: &BenchConfig) -> CliResult {
    let spec = model_or_toy(cli)?;
    let model = Model::build(&spec)?;
    let r = latency_bench::<T>(&model, cfg)?;
    println!(
        "{} {:?} batch {} at {}px on {} threads: {:.3} img/s (min {:.3}, max {:.3}, spread {:.1}%), ~{:.1} MiB",
        spec.label(),
        r.mode,
        r.batch,
        r.size,
        r.threads,
        r.fps,
        r.fps_min,
        r.fps_max,
        100.0 * r.spread,
        r.peak_bytes as f64 / (1u64 << 20) as f64
    );
    let mut w = output(cli, "bench.csv")?;
    writeln!(w, "mode,batch,size,iters,threads,fps,fps_min,fps_max,spread,peak_bytes")?;
    let mode = if r.mode == BenchMode::Train { "train" } else { "infer" };
    writeln!(
        w,
        "{mode},{},{},{},{},{:.3},{:.3},{:.3},{:.4},{}",
        r.batch, r.size, r.iters, r.threads, r.fps, r.fps_min, r.fps_max, r.spread, r.peak_bytes
    )?;
    w.flush()?;
    write_json(cli, "bench.json", &r)
}

fn train_config(cli: &Cli, path: Option<&Path>, epochs: Option<usize>) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::toy(epochs.unwrap_or(TOY_EPOCHS), TOY_LR_SCALE),
    };
    if let (Some(e), Some(_)) = (epochs, path) {
        cfg.epochs = e;
        cfg.drop_epochs = TrainConfig::scaled_drops(e);
    }
    cfg.seed = cli.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd<T: Scalar>(cli: &Cli, cfg: &TrainConfig) -> CliResult {
    let spec = model_or_toy(cli)?;
    let model = Model::build(&spec)?;
    let scenes = gen_dataset(cfg.seed, cfg.scenes, cfg.image_size)?;
    let mut store = model.init_params::<T>(cfg.seed);
    let every = (cfg.total_steps() / 10).max(1);
    let report = train(&model, &mut store, &scenes, cfg, |s| {
        if s.step % every == 0 {
            eprintln!("step {:>5}  epoch {:>4}  loss {:.6}", s.step, s.epoch, s.loss.total);
        }
    })?;
    let mut w = output(cli, "loss.csv")?;
    write_loss_csv(&mut w, &report.history)?;
    save_checkpoint(&cli.out.join("checkpoint"), &spec, &store)?;
    let (sets, ap) = evaluate(&model, &store, &scenes, cfg.batch_size, &InferConfig::default())?;
    let mut d = output(cli, "detections.csv")?;
    write_detections_csv(&mut d, &sets)?;
    let initial = report.initial_loss().unwrap_or(f64::NAN);
    let last = report.final_loss().unwrap_or(f64::NAN);
    println!(
        "{}: loss {initial:.6} -> {last:.6} ({:.1}%), AP50 {:.4}, AP {:.4}",
        spec.label(),
        100.0 * last / initial,
        ap.ap50,
        ap.ap
    );
    write_json(
        cli,
        "metrics.json",
        &serde_json::json!({
            "model": spec.label(),
            "steps": report.history.len(),
            "initial_loss": initial,
            "final_loss": last,
            "ap": ap.ap,
            "ap50": ap.ap50,
            "ap75": ap.ap75,
        }),
    )
}

fn eval<T: Scalar>(cli: &Cli, checkpoint: &Path, scenes: usize, size: usize) -> CliResult {
    if !checkpoint.is_dir() {
        return Err(CliError::Usage(format!(
            "{}: no such checkpoint directory",
            checkpoint.display()
        )));
    }
    let (model, store) = load_checkpoint::<T>(checkpoint)?;
    let data = gen_dataset(cli.seed, scenes, size)?;
    let (sets, ap) = evaluate(&model, &store, &data, 2, &InferConfig::default())?;
    println!(
        "{}: AP {:.4}  AP50 {:.4}  AP75 {:.4}",
        model.spec.label(),
        ap.ap,
        ap.ap50,
        ap.ap75
    );
    let mut d = output(cli, "detections.csv")?;
    write_detections_csv(&mut d, &sets)?;
    write_json(cli, "ap.json", &ap)
}

fn sweep_config(cli: &Cli, path: Option<&Path>) -> CliResult<SweepConfig> {
    let mut cfg = match path {
        Some(p) => read_json::<SweepConfig>(p)?,
        None => SweepConfig::default(),
    };
    if path.is_none() {
        if let Some(m) = &cli.model {
            cfg.base = ModelSpec::load(m)?;
        }
    }
    cfg.train.seed = cli.seed;
    Ok(cfg)
}

fn sweep_cmd<T: Scalar>(cli: &Cli, cfg: &SweepConfig) -> CliResult {
    println!(
        "{:>2} {:>2} {:>10} {:>9} {:>8} {:>8} {:>8}",
        "L", "B", "params", "GFLOPs", "tfps", "ifps", "metric"
    );
    let rows = sweep::<T>(cfg, |r| {
        println!(
            "{:>2} {:>2} {:>10} {:>9.4} {:>8.2} {:>8.2} {:>8.4}",
            r.layers, r.bottlenecks, r.params, r.gflops, r.tfps, r.ifps, r.metric
        );
    })?;
    let mut w = output(cli, "frontier.csv")?;
    write_frontier_csv(&mut w, &rows)?;
    Ok(())
}

fn table1(cli: &Cli) -> CliResult {
    let rows = reproduce_table1()?;
    let mut md = Vec::new();
    write_table1_markdown(&mut md, &rows)?;
    print!("{}", String::from_utf8_lossy(&md));
    let failed = rows.iter().filter(|r| !r.pass()).count();
    println!("{} of {} rows within tolerance", rows.len() - failed, rows.len());
    let mut w = output(cli, "table1.csv")?;
    write_table1_csv(&mut w, &rows)?;
    let mut m = output(cli, "table1.md")?;
    m.write_all(&md)?;
    Ok(())
}
