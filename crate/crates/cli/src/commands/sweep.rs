use std::fmt::Write as _;

use classrepsim::analysis::{classrepsim, peak_scale, AnalysisConfig};
use classrepsim::costmodel::cost_report;
use classrepsim::data::LabeledDataset;
use classrepsim::nn::{AttentionKind, AttentionSpec, ModelSpec, Placement, Window};

use super::train::train_eval;
use super::{mean_std, write, Ctx};
use crate::config::{Arch, DataSource};
use crate::exit::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Axis {
    /// No attention, attention in one stage at a time, attention everywhere.
    StageLocation,
    /// Condenser windows 1, 2, 4, 8 and global.
    CondenserSize,
    /// Attention kernel pairs (1,1), (1,3), (3,1), (3,3).
    KernelSize,
    /// Per-stage window selection: greedy search, peak CS, largest uniform.
    Strategy,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::StageLocation => "stage_location",
            Axis::CondenserSize => "condenser_size",
            Axis::KernelSize => "kernel_size",
            Axis::Strategy => "strategy",
        }
    }
}

struct Cell {
    label: String,
    spec: ModelSpec,
}

struct Runner<'a> {
    ctx: &'a Ctx,
    train: LabeledDataset,
    test: LabeledDataset,
    rows: String,
}

impl Runner<'_> {
    /// Trains every seed on `spec`; returns mean and std of test top-1.
    fn evaluate(&self, label: &str, spec: &ModelSpec) -> anyhow::Result<(f64, f64)> {
        let mut accs = Vec::new();
        let dir = self.ctx.cfg.output.dir.join(label.replace([' ', '/'], "_"));
        for &seed in &self.ctx.seeds {
            let run = train_eval(self.ctx, spec, &self.ctx.cfg.train, seed, &self.train, &self.test, label)?;
            write(&dir.join(format!("seed-{seed}.csv")), &run.metrics.to_csv())?;
            accs.push(run.test_top1);
        }
        Ok(mean_std(&accs))
    }

    fn record(&mut self, label: &str, windows: &str, spec: &ModelSpec, acc: (f64, f64)) -> anyhow::Result<()> {
        let cost = cost_report(spec)?;
        writeln!(
            self.rows,
            "{label},{windows},{},{:.6},{:.6},{},{}",
            self.ctx.seeds.len(),
            acc.0,
            acc.1,
            cost.total_params,
            cost.total_flops
        )?;
        if !self.ctx.quiet {
            println!("{label:<24} {windows:<24} top-1 {:.4} +- {:.4}", acc.0, acc.1);
        }
        Ok(())
    }
}

fn windows_label(spec: &ModelSpec) -> String {
    spec.stages
        .iter()
        .map(|s| match s.attention.kind {
            AttentionKind::None => "-".to_string(),
            _ => s.attention.window.to_string(),
        })
        .collect::<Vec<_>>()
        .join("/")
}

/// The configured attention, or STAC(8, 3x3, standard) when none is set.
fn sweep_attention(base: &ModelSpec) -> AttentionSpec {
    base.stages
        .iter()
        .map(|s| s.attention)
        .find(|a| a.kind != AttentionKind::None)
        .unwrap_or_else(|| AttentionSpec::stac(Window::Size(8), 3, 3, Placement::Standard))
}

fn without_attention(spec: &ModelSpec) -> ModelSpec {
    spec.clone().with_attention(AttentionSpec::none())
}

fn with_windows(base: &ModelSpec, att: AttentionSpec, windows: &[Option<Window>]) -> ModelSpec {
    let mut spec = without_attention(base);
    for (s, w) in windows.iter().enumerate() {
        if let Some(w) = w {
            spec = spec.with_stage_attention(s, AttentionSpec { window: *w, ..att });
        }
    }
    spec
}

fn grid(axis: Axis, base: &ModelSpec) -> Vec<Cell> {
    let att = sweep_attention(base);
    let plain = without_attention(base);
    match axis {
        Axis::StageLocation => {
            let mut cells = vec![Cell {
                label: "none".into(),
                spec: plain.clone(),
            }];
            for s in 0..base.stages.len() {
                cells.push(Cell {
                    label: format!("S{}", s + 1),
                    spec: plain.clone().with_stage_attention(s, att),
                });
            }
            cells.push(Cell {
                label: "all".into(),
                spec: plain.with_attention(att),
            });
            cells
        }
        Axis::CondenserSize => [Window::Size(1), Window::Size(2), Window::Size(4), Window::Size(8), Window::Global]
            .into_iter()
            .map(|w| Cell {
                label: format!("window {w}"),
                spec: plain.clone().with_attention(AttentionSpec { window: w, ..att }),
            })
            .collect(),
        Axis::KernelSize => [(1, 1), (1, 3), (3, 1), (3, 3)]
            .into_iter()
            .map(|(k1, k2)| Cell {
                label: format!("k{k1}x{k2}"),
                spec: plain.clone().with_attention(AttentionSpec { k1, k2, ..att }),
            })
            .collect(),
        Axis::Strategy => Vec::new(),
    }
}

/// Powers of two up to the stage's feature-map side.
fn viable_windows(side: usize) -> Vec<Window> {
    std::iter::successors(Some(1usize), |w| Some(w * 2))
        .take_while(|&w| w <= side)
        .map(Window::Size)
        .collect()
}

fn strategies(runner: &mut Runner<'_>, base: &ModelSpec) -> anyhow::Result<()> {
    let att = sweep_attention(base);
    let stages = base.effective_stages();

    // Greedy: fix stages in order, keeping the best window for each.
    let mut chosen: Vec<Option<Window>> = vec![None; stages.len()];
    for (s, stage) in stages.iter().enumerate() {
        let mut best: Option<(Window, f64)> = None;
        for w in viable_windows(stage.spatial) {
            let mut trial = chosen.clone();
            trial[s] = Some(w);
            let spec = with_windows(base, att, &trial);
            let label = format!("greedy stage{} w{w}", s + 1);
            let (mean, _) = runner.evaluate(&label, &spec)?;
            runner.ctx.progress(format!("{label}: {mean:.4}"));
            if best.is_none_or(|(_, b)| mean > b) {
                best = Some((w, mean));
            }
        }
        chosen[s] = best.map(|(w, _)| w);
    }
    let greedy = with_windows(base, att, &chosen);
    let acc = runner.evaluate("greedy", &greedy)?;
    runner.record("greedy", &windows_label(&greedy), &greedy, acc)?;

    // Max CS: peak-scale windows of a trained attention-free model.
    let plain = without_attention(base);
    let trained = train_eval(
        runner.ctx,
        &plain,
        &runner.ctx.cfg.train,
        runner.ctx.seeds[0],
        &runner.train,
        &runner.test,
        "max_cs probe",
    )?;
    let a = &runner.ctx.cfg.analysis;
    let analysis = AnalysisConfig {
        scales: a.scales.clone(),
        m: a.m,
        metric: a.metric,
        max_samples: a.max_samples,
        batch_size: a.batch_size,
    };
    let data = match a.split {
        classrepsim::data::Split::Train => &runner.train,
        classrepsim::data::Split::Test => &runner.test,
    };
    let curves = classrepsim(&trained.model, &data.images, &data.labels, &analysis)?;
    let peaks = peak_scale(&curves, &plain.stage_tap_ranges())?;
    let max_cs = with_windows(base, att, &peaks.into_iter().map(Some).collect::<Vec<_>>());
    let acc = runner.evaluate("max_cs", &max_cs)?;
    runner.record("max_cs", &windows_label(&max_cs), &max_cs, acc)?;

    // Max uniform: the final stage's side everywhere.
    let w = Window::Size(base.final_spatial());
    let uniform = with_windows(base, att, &vec![Some(w); stages.len()]);
    let acc = runner.evaluate("max_uniform", &uniform)?;
    runner.record("max_uniform", &windows_label(&uniform), &uniform, acc)
}

/// Full-length ResNet20 / CIFAR-10 protocol with eight seeds by default.
fn full_scale(mut ctx: Ctx) -> anyhow::Result<Ctx> {
    if ctx.cfg.data.source != DataSource::Cifar10 {
        return Err(ConfigError("--paper-scale requires data.source = \"cifar10\"".into()).into());
    }
    ctx.cfg.model.arch = Arch::Resnet20;
    ctx.cfg.model.stages.clear();
    ctx.cfg.model.channels.clear();
    ctx.cfg.model.width_multiplier = 1.0;
    ctx.cfg.model.depth_multiplier = 1;
    let t = &mut ctx.cfg.train;
    t.epochs = 100;
    t.warmup_epochs = 10;
    t.base_lr = 0.1;
    t.batch_size = 128;
    t.augment = true;
    if ctx.seeds.len() == 1 {
        let first = ctx.seeds[0];
        ctx.seeds = (first..first + 8).collect();
    }
    Ok(ctx)
}

pub fn run(ctx: Ctx, axis: Axis, full: bool) -> anyhow::Result<()> {
    let ctx = if full { full_scale(ctx)? } else { ctx };
    let base = ctx.cfg.model_spec()?;
    let out = ctx.out_dir()?.to_path_buf();
    ctx.write_resolved_config()?;
    let (train, test) = super::load_data(&ctx.cfg)?;
    let mut runner = Runner {
        ctx: &ctx,
        train,
        test,
        rows: String::from("label,windows,runs,test_top1_mean,test_top1_std,params,flops\n"),
    };
    if axis == Axis::Strategy {
        strategies(&mut runner, &base)?;
    } else {
        for cell in grid(axis, &base) {
            let acc = runner.evaluate(&cell.label, &cell.spec)?;
            runner.record(&cell.label, &windows_label(&cell.spec), &cell.spec, acc)?;
        }
    }
    write(&out.join(format!("sweep_{}.csv", axis.name())), &runner.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shapes() {
        let base = ModelSpec::resnet20(10);
        let labels = |axis| grid(axis, &base).into_iter().map(|c| c.label).collect::<Vec<_>>();
        assert_eq!(labels(Axis::StageLocation), ["none", "S1", "S2", "S3", "all"]);
        assert_eq!(labels(Axis::KernelSize), ["k1x1", "k1x3", "k3x1", "k3x3"]);
        assert_eq!(grid(Axis::CondenserSize, &base).len(), 5);
        let s2 = &grid(Axis::StageLocation, &base)[2].spec;
        assert_eq!(windows_label(s2), "-/8/-");
    }

    #[test]
    fn viable_windows_cover_stage() {
        assert_eq!(viable_windows(8), [1, 2, 4, 8].map(Window::Size));
        assert_eq!(viable_windows(1), [Window::Size(1)]);
    }
}
