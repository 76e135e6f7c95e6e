use std::fmt::Write as _;

use classrepsim::analysis::toy_sweep;

use super::{write, Ctx};

pub fn run(ctx: &Ctx, t_steps: usize, n_per_class: usize) -> anyhow::Result<()> {
    let out = ctx.out_dir()?.to_path_buf();
    ctx.write_resolved_config()?;
    let points = toy_sweep(t_steps, n_per_class, ctx.cfg.analysis.m, ctx.seeds[0])?;
    let mut csv = String::from("t,separation,cs\n");
    for p in &points {
        writeln!(csv, "{:.6},{:.6},{:.6}", p.t, p.separation, p.cs)?;
        if !ctx.quiet {
            println!("t={:.3} separation={:.2} cs={:.4}", p.t, p.separation, p.cs);
        }
    }
    write(&out.join("toy.csv"), &csv)
}
