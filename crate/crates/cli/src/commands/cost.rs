use std::fmt::Write as _;
use std::path::PathBuf;

use classrepsim::costmodel::cost_report;
use classrepsim::nn::{AttentionSpec, ModelSpec, Placement, Window};

use super::{write, Ctx};
use crate::config::RunConfig;

/// ResNet20 / CIFAR-10 rows: attention variants, kernel grid, condenser
/// windows and single-stage placements.
pub fn builtin_grid() -> Vec<(String, ModelSpec)> {
    let base = ModelSpec::resnet20(10);
    let stac = |w, k1, k2| base.clone().with_attention(AttentionSpec::stac(w, k1, k2, Placement::Standard));
    let mut rows = vec![
        ("base".to_string(), base.clone()),
        ("senet".into(), base.clone().with_attention(AttentionSpec::senet(Placement::Standard))),
    ];
    for (k1, k2) in [(1, 1), (1, 3), (3, 1), (3, 3)] {
        rows.push((format!("stac w8 k{k1}x{k2}"), stac(Window::Size(8), k1, k2)));
    }
    for w in [Window::Size(1), Window::Size(2), Window::Size(4), Window::Size(8), Window::Global] {
        rows.push((format!("stac w{w} k3x3"), stac(w, 3, 3)));
    }
    for s in 0..3 {
        let att = AttentionSpec::stac(Window::Size(8), 3, 3, Placement::Standard);
        rows.push((format!("stac w8 k3x3 stage{} only", s + 1), base.clone().with_stage_attention(s, att)));
    }
    rows
}

fn table(rows: &[(String, ModelSpec)]) -> anyhow::Result<String> {
    let mut csv = String::from("label,params,flops\n");
    for (label, spec) in rows {
        let r = cost_report(spec)?;
        writeln!(csv, "{label},{},{}", r.total_params, r.total_flops)?;
    }
    Ok(csv)
}

pub fn run(ctx: &Ctx, as_table: bool, configs: &[PathBuf]) -> anyhow::Result<()> {
    let out = ctx.out_dir()?.to_path_buf();
    ctx.write_resolved_config()?;
    if !as_table {
        let report = cost_report(&ctx.cfg.model_spec()?)?;
        write(&out.join("cost.json"), &report.to_json()?)?;
        println!(
            "params {} ({:.1}K), FLOPs {} ({:.2}M)",
            report.total_params,
            report.total_params as f64 / 1e3,
            report.total_flops,
            report.total_flops as f64 / 1e6
        );
        return Ok(());
    }
    let rows = if configs.is_empty() {
        builtin_grid()
    } else {
        configs
            .iter()
            .map(|p| {
                let cfg = RunConfig::load(p)?;
                let label = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into());
                Ok((label, cfg.model_spec()?))
            })
            .collect::<anyhow::Result<Vec<_>>>()?
    };
    let csv = table(&rows)?;
    write(&out.join("cost_table.csv"), &csv)?;
    if !ctx.quiet {
        println!("{:<28} {:>10} {:>10}", "config", "params", "MFLOPs");
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let flops: f64 = f[2].parse()?;
            println!("{:<28} {:>10} {:>10.2}", f[0], f[1], flops / 1e6);
        }
    }
    Ok(())
}
