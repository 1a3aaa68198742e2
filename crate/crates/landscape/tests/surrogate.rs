use gsa_core::factors::FactorTable;
use gsa_core::tensor::LandUse;
use landscape::{mass_balance, simulate, FactorAssignment, Landscape, LandscapeConfig, Outcome, RunOutput, Simulation};
use proptest::prelude::*;

fn desk() -> Landscape {
    Landscape::new(LandscapeConfig::desk()).unwrap()
}

fn assignment(codes: [u8; 11]) -> FactorAssignment {
    FactorAssignment::from_codes(&FactorTable::landscape_default(), &codes).unwrap()
}

fn total_export(out: &RunOutput) -> f64 {
    let atmosphere: f64 = [Outcome::Nh3Emission, Outcome::NoxEmission, Outcome::N2oEmission].iter().map(|&o| out.flux_total(o)).sum();
    let uptake = out.flux_total(Outcome::Nh4Uptake) + out.flux_total(Outcome::No3Uptake);
    atmosphere + uptake + out.outlet_export()
}

#[test]
fn record_has_expected_lengths() {
    let land = desk();
    let out = simulate(&assignment([1; 11]), &land).unwrap();
    assert_eq!(out.n_days(), 3 * 365);
    assert_eq!(out.n_months(), 36);
    assert_eq!(out.n_storage.len(), 3 * 365 + 1);
    for o in Outcome::ALL {
        let values = out.outcome_values(o, land.reference.mesh_width).unwrap();
        let expected = match out.series(o) {
            Some(_) => 1095,
            None => 36 * land.reference.n_pixels(),
        };
        assert_eq!(values.len(), expected, "{o}");
    }
}

#[test]
fn nitrogen_is_conserved_every_year() {
    let land = desk();
    for codes in [[1; 11], [0; 11], [2; 11], [0, 2, 1, 0, 2, 1, 0, 2, 1, 2, 0], [2, 0, 2, 1, 0, 0, 2, 1, 0, 0, 2]] {
        let a = assignment(codes);
        let out = simulate(&a, &land).unwrap();
        let years = mass_balance(&out, &a, &land);
        assert_eq!(years.len(), 3);
        for y in years {
            assert!(y.residual.abs() <= 1e-6, "{codes:?} {y:?}");
            assert!(y.inputs > 0.0 && y.exports > 0.0);
        }
    }
}

#[test]
fn inputs_follow_the_fertilization_schedule() {
    let land = desk();
    let a = assignment([1; 11]);
    let out = simulate(&a, &land).unwrap();
    let g = &out.grid;
    let crop_ha = (g.count(LandUse::Maize) as f64 * 190.0 + g.count(LandUse::Wheat) as f64 * 170.0) * g.pixel_area_ha();
    for y in mass_balance(&out, &a, &land) {
        assert!((y.inputs - crop_ha).abs() < 1e-9 * crop_ha);
    }
}

#[test]
fn without_fertilizer_the_stock_only_declines() {
    let mut cfg = LandscapeConfig::desk();
    cfg.fertilizer_override = Some(0.0);
    let land = Landscape::new(cfg).unwrap();
    let a = assignment([1; 11]);
    let out = simulate(&a, &land).unwrap();
    for w in out.n_storage.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0], "stock rose from {} to {}", w[0], w[1]);
    }
    for y in mass_balance(&out, &a, &land) {
        assert_eq!(y.inputs, 0.0);
        assert!(y.residual.abs() <= 1e-6, "{y:?}");
    }
}

#[test]
fn without_sources_outlet_load_vanishes() {
    // No fertilizer and no humus: the initial mineral N is flushed out.
    let mut cfg = LandscapeConfig::desk();
    cfg.fertilizer_override = Some(0.0);
    cfg.rates.humus_density = 0.0;
    let land = Landscape::new(cfg).unwrap();
    let out = simulate(&assignment([1; 11]), &land).unwrap();
    let loads: Vec<f64> = [Outcome::OutletNh4Load, Outcome::OutletNo3Load]
        .iter()
        .flat_map(|&o| out.series(o).unwrap().chunks(365).map(|c| c.iter().sum::<f64>()).collect::<Vec<_>>())
        .collect();
    let first = loads[0] + loads[3];
    let last = loads[2] + loads[5];
    assert!(last < 0.2 * first.max(1e-12) || last < 1e-3, "{loads:?}");
    assert!(*out.n_storage.last().unwrap() < out.n_storage[0]);
}

#[test]
fn zero_rain_gives_zero_discharge() {
    let cfg = LandscapeConfig::desk();
    let dry = Landscape::new(cfg.clone()).unwrap().forcing.without_rain();
    let land = Landscape::with_forcing(cfg, dry).unwrap();
    let out = simulate(&assignment([1; 11]), &land).unwrap();
    // groundwater starts empty and nothing recharges it
    assert!(out.series(Outcome::Discharge).unwrap().iter().all(|&q| q == 0.0));
    assert_eq!(out.outlet_export(), 0.0);
    assert!(out.series(Outcome::OutletNo3Conc).unwrap().iter().all(|&c| c == 0.0));
}

#[test]
fn without_leaching_exports_are_emissions_and_uptake() {
    let mut cfg = LandscapeConfig::desk();
    cfg.leaching_factor = 0.0;
    let land = Landscape::new(cfg).unwrap();
    let a = assignment([1; 11]);
    let out = simulate(&a, &land).unwrap();
    assert_eq!(out.outlet_export(), 0.0);
    assert_eq!(out.flux_total(Outcome::Leaching), 0.0);
    assert!(out.flux_total(Outcome::Discharge) > 0.0);
    let years = mass_balance(&out, &a, &land);
    let exports: f64 = years.iter().map(|y| y.exports).sum();
    assert!((exports - total_export(&out)).abs() <= 1e-9 * exports);
    for y in years {
        assert!(y.residual.abs() <= 1e-6);
    }
}

#[test]
fn identical_inputs_give_identical_output() {
    let land = desk();
    let a = assignment([0, 2, 1, 0, 2, 1, 0, 2, 1, 2, 0]);
    let first = simulate(&a, &land).unwrap();
    let second = simulate(&a, &land).unwrap();
    assert_eq!(first, second);
    let bits = |o: &RunOutput| o.n_storage.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&first), bits(&second));
}

#[test]
fn more_fertilizer_never_reduces_export() {
    let land = desk();
    for base in [[1; 11], [0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1], [2, 0, 0, 2, 2, 0, 1, 1, 0, 2, 1]] {
        let mut inputs = Vec::new();
        let mut exports = Vec::new();
        for k in 0..3 {
            let mut codes = base;
            codes[10] = k;
            let a = assignment(codes);
            let out = simulate(&a, &land).unwrap();
            inputs.push(mass_balance(&out, &a, &land).iter().map(|y| y.inputs).sum::<f64>());
            exports.push(total_export(&out));
        }
        assert!(inputs[0] < inputs[1] && inputs[1] < inputs[2], "{inputs:?}");
        assert!(exports[0] <= exports[1] && exports[1] <= exports[2], "{base:?} {exports:?}");
    }
}

#[test]
fn halving_the_mesh_barely_moves_total_export() {
    let land = desk();
    for (coarse, fine) in [(2u8, 1u8), (1, 0)] {
        let mut codes = [1; 11];
        codes[0] = coarse;
        let a = total_export(&simulate(&assignment(codes), &land).unwrap());
        codes[0] = fine;
        let b = total_export(&simulate(&assignment(codes), &land).unwrap());
        assert!((a - b).abs() < 0.05 * a, "{a} vs {b}");
    }
}

#[test]
fn resampled_maps_keep_landscape_means() {
    let land = desk();
    let out = simulate(&assignment([0; 11]), &land).unwrap();
    let native: f64 = (0..36).map(|m| out.map(Outcome::HsNo3, m).unwrap().iter().sum::<f64>()).sum::<f64>() / out.grid.n_pixels() as f64;
    let coarse = out.outcome_values(Outcome::HsNo3, 50.0).unwrap();
    let resampled = coarse.iter().sum::<f64>() / land.reference.n_pixels() as f64;
    assert!((native - resampled).abs() < 1e-9 * native);
}

#[test]
fn tensors_round_trip() {
    let land = desk();
    let out = simulate(&assignment([2; 11]), &land).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write_tensors(dir.path(), "abc").unwrap();
    let t = gsa_core::tensor::read_tensor(&dir.path().join("hs_no3.bin"), Some("abc")).unwrap();
    assert_eq!(t, out.to_tensor(Outcome::HsNo3).unwrap());
    let q = gsa_core::tensor::read_tensor(&dir.path().join("discharge.bin"), None).unwrap();
    assert_eq!(q.values(), out.series(Outcome::Discharge).unwrap());
}

#[test]
fn invalid_assignment_is_rejected() {
    let mut a = assignment([1; 11]);
    a.porosity = 1.5;
    assert!(simulate(&a, &desk()).is_err());
    let mut a = assignment([1; 11]);
    a.mesh_width = 30.0;
    assert!(simulate(&a, &desk()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn pools_stay_physical(codes in proptest::array::uniform11(0u8..3)) {
        let land = desk();
        let a = assignment(codes);
        let mut sim = Simulation::new(&a, &land).unwrap();
        let soil = *sim.soil();
        let cap_s = a.hs_depth * a.porosity;
        while !sim.is_finished() {
            sim.step_day().unwrap();
            if sim.day() % 29 != 0 {
                continue;
            }
            for p in (0..sim.grid().n_pixels()).step_by(7) {
                let s = sim.pixel_state(p);
                let pools = [s.hs_nh4, s.hs_no3, s.hi_nh4, s.hi_no3, s.gw_nh4, s.gw_no3, s.organic, s.hs_water, s.hi_water, s.gw_water];
                prop_assert!(pools.iter().all(|&x| x >= 0.0), "{s:?}");
                prop_assert!(s.hs_water <= cap_s * (1.0 + 1e-12));
                prop_assert!(s.hi_water <= soil.hi_capacity * (1.0 + 1e-12));
                prop_assert!(s.gw_water <= soil.gw_capacity * (1.0 + 1e-12));
            }
        }
    }
}
