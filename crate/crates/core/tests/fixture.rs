use hfgt::fixture;
use hfgt::{compile, load_model, parse_scenario, SystemModel};

fn model() -> SystemModel {
    load_model(fixture::MODEL).unwrap()
}

/// Four significant figures.
fn sig4(a: f64, b: f64) -> bool {
    (a - b).abs() <= 5e-4 * b.abs()
}

// Mass ratios per process, transcribed from the device model list:
// (process, inputs, outputs).
#[allow(clippy::type_complexity)]
const STOICHIOMETRY: &[(&str, &[(&str, f64)], &[(&str, f64)])] = &[
    ("electrolyze", &[("h2o", 8.936), ("power", 40.0)], &[("h2", 1.0), ("o2", 7.936)]),
    ("reform_smr", &[("ch4", 1.989), ("h2o", 4.468), ("heat", 19.4)], &[("h2", 1.0), ("co2", 5.457)]),
    ("burn_ng_heat", &[("ch4", 1.0), ("o2", 3.989)], &[("h2o", 2.246), ("co2", 2.743), ("heat", 52.6)]),
    (
        "burn_ng_power",
        &[("ch4", 1.0), ("o2", 3.989)],
        &[("h2o", 2.246), ("co2", 2.743), ("power", 6.897), ("heat_loss", 29.1)],
    ),
    ("burn_h2_heat", &[("h2", 1.0), ("o2", 7.936)], &[("h2o", 8.936), ("heat", 134.5)]),
    (
        "burn_h2_power",
        &[("h2", 1.0), ("o2", 7.936)],
        &[("h2o", 8.936), ("power", 17.616), ("heat_loss", 74.3)],
    ),
];

#[test]
fn refined_tensors_carry_the_mass_ratios() {
    let m = model();
    let nets = hfgt::qp::compile_nets(&m).unwrap();
    let mut checked = 0;
    for cap in &m.capabilities {
        let pid = &m.processes[cap.process].id;
        let Some((_, ins, outs)) = STOICHIOMETRY.iter().find(|s| s.0 == pid) else {
            continue;
        };
        let y = m.buffer_index(cap.resource).unwrap();
        let op = |id: &str| m.operand_index(id).unwrap();
        for &(o, r) in *ins {
            let got = nets.refined_minus.get(op(o), y, cap.index);
            assert!(sig4(got, r), "{} consumes {got} {o}, expected {r}", cap.id);
        }
        for &(o, r) in *outs {
            let got = nets.refined_plus.get(op(o), y, cap.index);
            assert!(sig4(got, r), "{} yields {got} {o}, expected {r}", cap.id);
        }
        // nothing besides the listed operands
        let listed = ins.len() + outs.len();
        let present = (0..m.operands.len())
            .filter(|&i| nets.refined_minus.get(i, y, cap.index) != 0.0 || nets.refined_plus.get(i, y, cap.index) != 0.0)
            .count();
        assert_eq!(present, listed, "{}", cap.id);
        checked += 1;
    }
    // electrolysis, reformer, two gas burners, two hydrogen burners, gas power at n1 and n4
    assert_eq!(checked, 8);
}

#[test]
fn ratios_stay_within_one_percent_of_atomic_mass_balance() {
    // molar masses: H2 2.016, O2 31.998, H2O 18.015, CH4 16.043, CO2 44.009
    let balance = |ins: &[(&str, f64)], outs: &[(&str, f64)]| {
        let mass = |s: &[(&str, f64)]| s.iter().filter(|(o, _)| ["h2", "o2", "h2o", "ch4", "co2"].contains(o)).map(|p| p.1).sum::<f64>();
        (mass(ins), mass(outs))
    };
    for (p, ins, outs) in STOICHIOMETRY {
        let (a, b) = balance(ins, outs);
        assert!((a - b).abs() <= 0.01 * a, "{p}: {a} in vs {b} out");
    }
    // 2 H2O -> 2 H2 + O2, per ton H2
    assert!(sig4(2.0 * 18.015 / (2.0 * 2.016), 8.936));
}

struct Row {
    capability: &'static str,
    quadratic: f64,
    linear: f64,
    capacity: f64,
    days: usize,
}

const fn row(capability: &'static str, quadratic: f64, linear: f64, capacity: f64, days: usize) -> Row {
    Row {
        capability,
        quadratic,
        linear,
        capacity,
        days,
    }
}

// Resource overview table. Emission export prices come from the scenarios and
// are zero in the model.
const TABLE: &[Row] = &[
    row("n1.electrolyze", 0.0, 1000.0, 3000.0, 2),
    row("n1.burn_ng_power", 0.01, 145.0, 3000.0, 1),
    row("n1.import_power", 0.0, 10.0, 100000.0, 0),
    row("n1.import_water", 0.0, 0.0, 30000.0, 0),
    row("n1.export_water", 0.0, 0.0, 30000.0, 0),
    row("n1.import_o2", 0.0, 0.0, 30000.0, 0),
    row("n1.export_o2", 0.0, 0.0, 30000.0, 0),
    row("n1.export_co2", 0.0, 0.0, 30000.0, 0),
    row("n1.export_heat_loss", 0.0, 0.0, 30000.0, 0),
    row("n1.store_h2", 0.0, 0.1, 21000.0, 1),
    row("n1.store_ng", 0.0, 0.1, 100000.0, 1),
    row("n2.reform_smr", 0.0, 1000.0, 3000.0, 2),
    row("n2.burn_ng_heat", 0.0, 100.0, 1000.0, 1),
    row("n2.import_water", 0.0, 0.0, 30000.0, 0),
    row("n2.export_water", 0.0, 0.0, 30000.0, 0),
    row("n2.import_o2", 0.0, 0.0, 30000.0, 0),
    row("n2.export_co2", 0.0, 0.0, 30000.0, 0),
    row("n2.store_h2", 0.0, 0.1, 21000.0, 1),
    row("n2.store_ng", 0.0, 0.1, 100000.0, 1),
    row("n3.manufacture_ammonia", 0.0, 100.0, 2000.0, 0),
    row("n3.store_h2", 0.0, 0.1, 21000.0, 1),
    row("n4.burn_h2_power", 0.01, 1000.0, 1000.0, 1),
    row("n4.burn_ng_power", 0.01, 145.0, 3000.0, 1),
    row("n4.consume_power", 0.0, 0.0, 10000.0, 0),
    row("n4.import_o2", 0.0, 0.0, 30000.0, 0),
    row("n4.export_water", 0.0, 0.0, 30000.0, 0),
    row("n4.export_heat_loss", 0.0, 0.0, 30000.0, 0),
    row("n4.export_co2", 0.0, 0.0, 30000.0, 0),
    row("n4.store_h2", 0.0, 0.1, 21000.0, 1),
    row("n4.store_ng", 0.0, 0.1, 100000.0, 1),
    row("n5.burn_h2_heat", 0.0, 300.0, 1000.0, 1),
    row("n5.burn_ng_heat", 0.0, 100.0, 1000.0, 1),
    row("n5.consume_heat", 0.0, 0.0, 5000.0, 0),
    row("n5.export_water", 0.0, 0.0, 30000.0, 0),
    row("n5.export_co2", 0.0, 0.0, 30000.0, 0),
    row("n5.import_o2", 0.0, 0.0, 30000.0, 0),
    row("n5.store_h2", 0.0, 0.1, 21000.0, 1),
    row("n5.store_ng", 0.0, 0.1, 100000.0, 1),
    row("n6.import_ng", 0.0, 130.0, 100000.0, 0),
    row("n7.regasify_lng", 0.0, 210.0, 100000.0, 0),
    row("n7.store_ng", 0.0, 0.1, 100000.0, 1),
    row("n8.import_h2", 0.0, 3000.0, 100000.0, 0),
    row("n9.store_h2", 0.0, 0.1, 21000.0, 1),
    row("n10.store_ng", 0.0, 0.1, 100000.0, 1),
];

// Deliberate departures from the table; anything else must match exactly.
// consume_heat: 35,000 MMBTU/day of demand cannot pass a 5,000 cap.
// import_power: a small quadratic term spreads renewable intake.
const DEVIATIONS: &[(&str, &str, f64)] = &[("n5.consume_heat", "capacity", 50000.0), ("n1.import_power", "quadratic", 0.01)];

fn expected(capability: &str, field: &str, table: f64) -> f64 {
    DEVIATIONS
        .iter()
        .find(|d| d.0 == capability && d.1 == field)
        .map_or(table, |d| d.2)
}

#[test]
fn every_table_row_is_in_the_fixture() {
    let m = model();
    for r in TABLE {
        let idx = m.capability_index(r.capability).unwrap_or_else(|| panic!("{} missing", r.capability));
        let c = &m.capabilities[idx];
        assert_eq!(c.quadratic_cost, expected(r.capability, "quadratic", r.quadratic), "{}", r.capability);
        assert_eq!(c.linear_cost, expected(r.capability, "linear", r.linear), "{}", r.capability);
        assert_eq!(c.capacity, expected(r.capability, "capacity", r.capacity), "{}", r.capability);
        assert_eq!(c.duration, r.days, "{}", r.capability);
    }
}

#[test]
fn pipelines_match_the_table() {
    let m = model();
    for (prefix, count) in [("h2_line_", 10), ("ng_line_", 7)] {
        for n in 1..=count {
            let id = format!("{prefix}{n}.transport");
            let c = &m.capabilities[m.capability_index(&id).unwrap_or_else(|| panic!("{id}"))];
            let cap = if prefix == "h2_line_" && (n == 4 || n == 6) { 260.0 } else { 10000.0 };
            assert_eq!((c.linear_cost, c.capacity, c.duration), (0.01, cap, 1), "{id}");
        }
    }
    let transports = m.capabilities.iter().filter(|c| c.id.ends_with(".transport")).count();
    assert_eq!(transports, 17);
    assert_eq!(TABLE.len() + transports, m.capabilities.len());
}

const AMMONIA: [f64; 20] = [
    0.0, 0.0, 0.0, 0.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0, 126.0,
    126.0, 0.0,
];
const POWER: [f64; 20] = [
    0.0, 0.0, 0.0, 0.0, 1435.0, 1459.0, 1312.0, 1189.0, 1402.0, 1404.0, 1363.0, 1416.0, 1479.0, 1288.0, 1281.0, 1455.0,
    1480.0, 1476.0, 1275.0, 0.0,
];

#[test]
fn scenarios_carry_the_supply_and_demand_data() {
    let heat: Vec<f64> = (1..=20).map(|d| if (5..=19).contains(&d) { 35000.0 } else { 0.0 }).collect();
    let renewables: Vec<f64> = (1..=20).map(|d| if d <= 15 { 6000.0 } else { 0.0 }).collect();
    let prices = [vec![], vec![("n5", 250.0)], vec![], vec![("ALL", 500.0)]];
    for (n, (id, text)) in fixture::SCENARIOS.iter().enumerate() {
        let s = parse_scenario(text).unwrap();
        assert_eq!((s.id.as_str(), s.horizon), (*id, 20));
        let series = |cap: &str, list: &[hfgt::model::SeriesDoc]| {
            list.iter().find(|d| d.capability.get_ref() == cap).map(|d| d.values.clone())
        };
        assert_eq!(series("n3.manufacture_ammonia", &s.demand).unwrap(), AMMONIA.to_vec());
        assert_eq!(series("n4.consume_power", &s.demand).unwrap(), POWER.to_vec());
        assert_eq!(series("n5.consume_heat", &s.demand).unwrap(), heat);
        let supply = series("n1.import_power", &s.supply).unwrap();
        // renewables belong to scenarios 3 and 4
        let want = if n >= 2 { renewables.clone() } else { vec![0.0; 20] };
        assert_eq!(supply, want, "{id}");
        let got: Vec<(&str, f64)> = s.carbon_price.iter().map(|p| (p.resource.get_ref().as_str(), p.price)).collect();
        assert_eq!(got, prices[n], "{id}");
    }
}

#[test]
fn structural_dimensions() {
    let m = model();
    assert_eq!(m.concept.shape(), (219, 27));
    assert_eq!(m.concept.nnz(), 61);
    assert_eq!(m.capabilities.len(), 61);
    assert_eq!(m.buffers.len(), 10);
    assert_eq!(m.operands.len(), 8);
    let nets = hfgt::qp::compile_nets(&m).unwrap();
    assert_eq!(nets.tensor_plus.dims(), (8, 10, 61));
    assert_eq!(nets.tensor_plus.nnz() + nets.tensor_minus.nnz(), 122);
    assert_eq!(hfgt::incidence::signed_nnz(&nets.tensor_plus, &nets.tensor_minus), 98);
}

#[test]
fn qp_dimensions_follow_the_identities() {
    let m = model();
    for (id, text) in fixture::SCENARIOS {
        let p = compile(&m, &parse_scenario(text).unwrap()).unwrap();
        let r = &p.report;
        assert_eq!((r.x, r.x_formula), (8463, 8463), "{id}");
        assert_eq!((r.a_rows, r.a_formula), (7323, 7323), "{id}");
        assert_eq!((r.d_rows, r.d_formula), (1281, 1281), "{id}");
        for b in r.eq_blocks.iter().chain(&r.ineq_blocks) {
            assert_eq!(b.rows, b.formula, "{id}: {}", b.name);
        }
        let sizes: Vec<(&str, usize)> = r.eq_blocks.iter().map(|b| (b.name, b.rows)).collect();
        assert_eq!(
            sizes,
            [
                ("place dynamics", 1600),
                ("transition dynamics", 1220),
                ("duration", 1220),
                ("service places", 160),
                ("service transitions", 880),
                ("sync+", 880),
                ("sync-", 880),
                ("boundary", 80),
                ("initial", 149),
                ("final", 254),
            ]
        );
        assert_eq!(p.qp.a.nrows(), 7323);
        assert_eq!(p.qp.d.nrows(), 1281);
        assert_eq!(p.qp.layout.len(), 8463);
    }
}
