use std::fmt::Write as _;

use classrepsim::data::{save_checkpoint, LabeledDataset};
use classrepsim::nn::{Model, ModelSpec};
use classrepsim::train::{evaluate, train_with, RunMetrics, TrainConfig};

use super::{mean_std, write, Ctx};

pub struct Trained {
    pub model: Model<f32>,
    pub metrics: RunMetrics,
    pub test_top1: f64,
}

/// Builds a model with `seed`, trains it and evaluates on `test`.
pub fn train_eval(
    ctx: &Ctx,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
    train: &LabeledDataset,
    test: &LabeledDataset,
    label: &str,
) -> anyhow::Result<Trained> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let mut model = Model::new(spec.clone(), seed)?;
    let metrics = train_with(&mut model, train, Some(test), &cfg, |e| {
        ctx.progress(format!(
            "[{label} seed {seed}] epoch {}/{} loss {:.4} train {:.4} test {:.4} lr {:.5}",
            e.epoch,
            cfg.epochs,
            e.train_loss,
            e.train_top1,
            e.eval_top1.unwrap_or(f64::NAN),
            e.lr
        ))
    })?;
    let test_top1 = evaluate(&model, test, cfg.batch_size)?;
    Ok(Trained {
        model,
        metrics,
        test_top1,
    })
}

pub fn run(ctx: &Ctx) -> anyhow::Result<()> {
    let spec = ctx.cfg.model_spec()?;
    let (train, test) = super::load_data(&ctx.cfg)?;
    let out = ctx.out_dir()?.to_path_buf();
    ctx.write_resolved_config()?;
    ctx.progress(format!(
        "training {} parameters on {} samples ({} test)",
        Model::<f32>::new(spec.clone(), 0)?.num_params(),
        train.len(),
        test.len()
    ));
    let multi = ctx.seeds.len() > 1;
    let mut summary = String::from("seed,final_train_loss,final_train_top1,test_top1\n");
    let mut finals = Vec::new();
    for &seed in &ctx.seeds {
        let dir = if multi { out.join(format!("seed-{seed}")) } else { out.clone() };
        let mut run = train_eval(ctx, &spec, &ctx.cfg.train, seed, &train, &test, "train")?;
        let ckpt = dir.join("model.ckpt");
        write(&dir.join("metrics.csv"), &run.metrics.to_csv())?;
        std::fs::create_dir_all(&dir)?;
        save_checkpoint(&run.model, &ckpt)?;
        run.metrics.checkpoint = Some(ckpt);
        let last = run.metrics.epochs.last().expect("at least one epoch");
        writeln!(
            summary,
            "{seed},{:.6},{:.6},{:.6}",
            last.train_loss, last.train_top1, run.test_top1
        )?;
        finals.push([last.train_loss, last.train_top1, run.test_top1]);
        ctx.progress(format!("seed {seed}: test top-1 {:.4}", run.test_top1));
    }
    if multi {
        let cols: Vec<(f64, f64)> = (0..3)
            .map(|k| mean_std(&finals.iter().map(|r| r[k]).collect::<Vec<_>>()))
            .collect();
        writeln!(summary, "mean,{:.6},{:.6},{:.6}", cols[0].0, cols[1].0, cols[2].0)?;
        writeln!(summary, "std,{:.6},{:.6},{:.6}", cols[0].1, cols[1].1, cols[2].1)?;
        write(&out.join("summary.csv"), &summary)?;
        println!("test top-1 {:.4} +- {:.4} over {} seeds", cols[2].0, cols[2].1, ctx.seeds.len());
    } else {
        println!("test top-1 {:.4}", finals[0][2]);
    }
    Ok(())
}
