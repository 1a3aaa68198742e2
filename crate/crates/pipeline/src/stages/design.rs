use gsa_core::design::{certify, generate_regular_design, StrengthCheck, StrengthReport};
use serde::Serialize;

use super::{Ctx, DESIGN_CSV};
use crate::Result;

#[derive(Serialize)]
struct DesignSummary<'a> {
    n_runs: usize,
    n_factors: usize,
    labels: &'a [String],
    generators: Option<&'a [Vec<u8>]>,
    report: StrengthReport,
    check: StrengthCheck,
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let design = generate_regular_design(&ctx.config.design_params()?)?.with_labels(ctx.table.ids())?;
    let (report, check) = certify(&design)?;
    ctx.store.reset_dir("design")?;
    ctx.store.write(DESIGN_CSV, design.to_csv())?;
    ctx.store.write("design/design_physical.csv", design.to_physical_csv(&ctx.table)?)?;
    let summary = DesignSummary {
        n_runs: design.n_runs(),
        n_factors: design.n_factors(),
        labels: design.labels(),
        generators: design.generators().map(|g| g.columns.as_slice()),
        report,
        check,
    };
    ctx.store.write_json("design/strength.json", &summary)?;
    log::info!("design: {} runs x {} factors", design.n_runs(), design.n_factors());
    Ok(())
}
