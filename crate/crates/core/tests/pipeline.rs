//! Safety gaps and fuel savings driven by reference channel statistics.

use radcom_sim::fuel::{calibrate_multiplier, AeroParams, DragReductionCurve, SavingTarget};
use radcom_sim::safety::{platoon_gaps, worst_case_comm_delay, BrakingScenario, DelayInput};

// (pdr, mean latency s) at 0, 50 and 100 % penetration
const TABLE: [(f64, f64); 3] = [(0.6985, 0.1368), (0.7859, 0.10957), (0.9015, 0.00145)];

fn gaps() -> Vec<Vec<f64>> {
    let b = BrakingScenario::default();
    TABLE
        .iter()
        .map(|&(pdr, l)| platoon_gaps(&b, 0.0, &[DelayInput { pdr, mean_latency: l, period: 0.5 }; 3]).unwrap().gaps())
        .collect()
}

#[test]
fn delay_quantiles_by_hand() {
    // ceil(ln 1e-3 / ln 0.3015) = 6, ceil(ln 1e-3 / ln 0.2141) = 5, ceil(ln 1e-3 / ln 0.0985) = 3
    let d: Vec<f64> = TABLE.iter().map(|&(p, l)| worst_case_comm_delay(p, l, 0.5, 1e-3).unwrap()).collect();
    assert!((d[0] - 3.1368).abs() < 1e-12);
    assert!((d[1] - 2.60957).abs() < 1e-12);
    assert!((d[2] - 1.50145).abs() < 1e-12);
}

#[test]
fn gaps_shrink_with_penetration() {
    let g = gaps();
    // equal decelerations: gap = v0 * tau
    assert!((g[0][0] - 22.2 * 3.4368).abs() < 1e-9);
    for pair in 0..3 {
        assert!(g[2][pair] < g[1][pair] && g[1][pair] < g[0][pair]);
    }
}

#[test]
fn reference_statistics_admit_a_drag_multiplier() {
    let g = gaps();
    let targets = [
        SavingTarget { gaps: g[1].clone(), saving: 0.02, tolerance: 0.01 },
        SavingTarget { gaps: g[2].clone(), saving: 0.056, tolerance: 0.015 },
    ];
    let c = calibrate_multiplier(&g[0], &targets, 22.2, &AeroParams::default(), &DragReductionCurve::default(), (0.5, 2.0)).unwrap();
    assert!(c.satisfied(), "{c:?}");
    assert!((0.5..=2.0).contains(&c.multiplier));
}
