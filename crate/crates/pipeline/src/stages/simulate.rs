use gsa_core::tensor::{design_checksum, write_tensor, OutcomeTensor, TimeAxis};
use landscape::{mass_balance, simulate, FactorAssignment, YearBalance};
use rayon::prelude::*;
use serde::Serialize;

use super::{tensor_path, Ctx};
use crate::store::{csv_line, fmt_f64};
use crate::{Error, Result};

struct RunRecord {
    /// Per configured outcome, time-major values on the reference grid.
    values: Vec<Vec<f64>>,
    axes: Vec<TimeAxis>,
    balance: Vec<YearBalance>,
}

#[derive(Serialize)]
struct SimulationSummary {
    runs: usize,
    design_checksum: String,
    max_abs_residual: f64,
    outcomes: Vec<String>,
}

/// Simulates every design row; returns the number of simulator invocations.
pub fn run(ctx: &Ctx) -> Result<usize> {
    let design = ctx.load_design()?;
    let checksum = design_checksum(&design);
    let land = &ctx.landscape;
    let mesh = land.reference.mesh_width;
    let outcomes = &ctx.config.outcomes;
    let n = design.n_runs();

    let mut records = (0..n)
        .into_par_iter()
        .map(|r| -> Result<RunRecord> {
            let fail = |source| Error::Simulation { run: r, source };
            let a = FactorAssignment::from_codes(&ctx.table, design.row(r)).map_err(fail)?;
            let out = simulate(&a, land).map_err(fail)?;
            let values = outcomes.iter().map(|&o| out.outcome_values(o, mesh)).collect::<std::result::Result<Vec<_>, _>>().map_err(fail)?;
            let axes = outcomes.iter().map(|&o| out.time_axis(o)).collect();
            Ok(RunRecord { values, axes, balance: mass_balance(&out, &a, land) })
        })
        .collect::<Result<Vec<_>>>()?;

    ctx.store.reset_dir("tensors")?;
    ctx.store.reset_dir("simulate")?;
    for (k, &o) in outcomes.iter().enumerate() {
        let axis = records[0].axes[k];
        let mut values = Vec::with_capacity(n * records[0].values[k].len());
        for rec in &mut records {
            debug_assert_eq!(rec.axes[k], axis);
            values.extend(std::mem::take(&mut rec.values[k]));
        }
        let grid = out_grid(o, ctx);
        let t = OutcomeTensor::new(o.name(), o.unit(), o.aggregation(), axis, grid, n, values)?;
        write_tensor(&ctx.store.path(&tensor_path(o)), &t, &checksum)?;
    }

    let mut csv = csv_line(["run", "year", "inputs_kg", "exports_kg", "storage_change_kg", "residual"]);
    let mut worst = 0.0f64;
    for (r, rec) in records.iter().enumerate() {
        for y in &rec.balance {
            worst = worst.max(y.residual.abs());
            csv.push_str(&csv_line([
                r.to_string(),
                y.year.to_string(),
                fmt_f64(y.inputs),
                fmt_f64(y.exports),
                fmt_f64(y.storage_change),
                fmt_f64(y.residual),
            ]));
        }
    }
    ctx.store.write("simulate/mass_balance.csv", csv)?;
    ctx.store.write_json(
        "simulate/summary.json",
        &SimulationSummary {
            runs: n,
            design_checksum: checksum,
            max_abs_residual: worst,
            outcomes: outcomes.iter().map(|o| o.name().to_string()).collect(),
        },
    )?;
    log::info!("simulate: {n} runs, worst annual N residual {worst:e}");
    Ok(n)
}

fn out_grid(o: landscape::Outcome, ctx: &Ctx) -> Option<gsa_core::tensor::GridMeta> {
    (o.kind() != landscape::OutcomeKind::Outflow).then(|| ctx.landscape.reference.clone())
}
