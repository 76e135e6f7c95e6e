use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use classrepsim::analysis::{
    capture_features, curves_from_features, peak_scale, stratified_indices, CSCurveSet, FeatureSet,
};
use classrepsim::data::{load_checkpoint_into, read_feature_dump, write_cs_csv, write_feature_dump, Split};
use classrepsim::nn::{Model, ModelSpec, Window};

use super::{write, Ctx};
use crate::config::DataSource;
use crate::exit::ConfigError;

fn capture(ctx: &Ctx, spec: &ModelSpec, checkpoint: Option<&Path>) -> anyhow::Result<FeatureSet> {
    let mut model = Model::new(spec.clone(), ctx.seeds[0])?;
    match checkpoint {
        Some(path) => {
            load_checkpoint_into(&mut model, path).with_context(|| format!("loading {}", path.display()))?
        }
        None => ctx.progress("no checkpoint given: analyzing a freshly initialized model"),
    }
    let (train, test) = super::load_data(&ctx.cfg)?;
    let data = match ctx.cfg.analysis.split {
        Split::Train => train,
        Split::Test => test,
    };
    let a = &ctx.cfg.analysis;
    let idx = stratified_indices(&data.labels, a.max_samples);
    let data = data.subset(&idx);
    ctx.progress(format!("capturing features of {} {} samples", data.len(), a.split));
    Ok(capture_features(&model, &data.images, &data.labels, a.batch_size)?)
}

/// `stage,first_layer,last_layer,window,window_pixels`; a global window is
/// reported with the stage's feature-map side as its pixel size.
fn peak_summary(curves: &CSCurveSet, spec: &ModelSpec) -> anyhow::Result<String> {
    let ranges = spec.stage_tap_ranges();
    let peaks = peak_scale(curves, &ranges)?;
    let mut csv = String::from("stage,first_layer,last_layer,window,window_pixels\n");
    for (s, ((range, window), stage)) in ranges.iter().zip(&peaks).zip(spec.effective_stages()).enumerate() {
        let pixels = match window {
            Window::Size(k) => (*k).min(stage.spatial),
            Window::Global => stage.spatial,
        };
        writeln!(csv, "{},{},{},{window},{pixels}", s + 1, range.start, range.end - 1)?;
    }
    Ok(csv)
}

pub fn run(ctx: &Ctx, checkpoint: Option<&Path>, dump: Option<&Path>, write_dump: Option<&Path>) -> anyhow::Result<()> {
    let out = ctx.out_dir()?.to_path_buf();
    ctx.write_resolved_config()?;
    let a = &ctx.cfg.analysis;
    let dump = dump.or(match ctx.cfg.data.source {
        DataSource::Dump => Some(
            ctx.cfg
                .data
                .path
                .as_deref()
                .ok_or_else(|| ConfigError("data.path is required for source = \"dump\"".into()))?,
        ),
        _ => None,
    });
    let spec = ctx.cfg.model_spec()?;
    let features = match dump {
        Some(path) => {
            if !path.exists() {
                return Err(ConfigError(format!("feature dump not found: {}", path.display())).into());
            }
            read_feature_dump(path)?
        }
        None => capture(ctx, &spec, checkpoint)?,
    };
    if let Some(path) = write_dump {
        write_feature_dump(&features, path)?;
    }
    let mut curves = curves_from_features(&features, &a.scales, a.m, a.metric)?;
    curves.meta.dataset = match dump {
        Some(p) => p.display().to_string(),
        None => format!("{:?}/{}", ctx.cfg.data.source, a.split).to_lowercase(),
    };
    curves.meta.model = checkpoint.map_or_else(|| "init".to_string(), |p| p.display().to_string());
    write_cs_csv(&curves, &out.join("cs.csv"))?;
    write(&out.join("cs_meta.json"), &serde_json::to_string_pretty(&curves.meta)?)?;

    if !ctx.quiet {
        let header: Vec<String> = curves.scales.iter().map(|s| format!("{s:>8}")).collect();
        println!("{:<16}{}", "layer", header.join(""));
        for (name, row) in curves.layer_names.iter().zip(&curves.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>8.4}")).collect();
            println!("{name:<16}{}", cells.join(""));
        }
    }
    if spec.tap_names().len() == curves.num_taps() {
        let summary = peak_summary(&curves, &spec)?;
        write(&out.join("peak_scales.csv"), &summary)?;
        if !ctx.quiet {
            println!("peak scale per stage:\n{summary}");
        }
    } else {
        ctx.progress("taps do not match the configured model: peak-scale summary skipped");
    }
    Ok(())
}
