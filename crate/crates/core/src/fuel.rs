//! Aerodynamic drag reduction and platoon fuel consumption at constant speed.

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FuelError {
    #[error("gap lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid aero parameter {0}")]
    Invalid(&'static str),
    #[error("drag table must be non-empty with increasing gaps and non-increasing values")]
    BadTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeroParams {
    pub mass: f64,
    pub cd0: f64,
    pub frontal_area: f64,
    pub air_density: f64,
    pub c_rr: f64,
    pub drivetrain_efficiency: f64,
    /// J/L.
    pub fuel_energy_density: f64,
}

impl Default for AeroParams {
    fn default() -> Self {
        AeroParams {
            mass: 40000.0,
            cd0: 0.6,
            frontal_area: 10.0,
            air_density: 1.225,
            c_rr: 0.005,
            drivetrain_efficiency: 0.4,
            fuel_energy_density: 35.8e6,
        }
    }
}

impl AeroParams {
    pub fn validate(&self) -> Result<(), FuelError> {
        let all_positive = [self.mass, self.cd0, self.frontal_area, self.air_density, self.c_rr, self.fuel_energy_density]
            .iter()
            .all(|v| *v > 0.0);
        if !all_positive {
            return Err(FuelError::Invalid("all aero parameters must be > 0"));
        }
        if !(self.drivetrain_efficiency > 0.0 && self.drivetrain_efficiency <= 1.0) {
            return Err(FuelError::Invalid("drivetrain_efficiency must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Leader,
    Trailing,
}

/// Piecewise-linear gap -> drag reduction tables.
#[derive(Debug, Clone, PartialEq)]
pub struct DragReductionCurve {
    pub leader: Vec<(f64, f64)>,
    pub trailing: Vec<(f64, f64)>,
    /// Scale applied to the trailing table.
    pub multiplier: f64,
}

impl Default for DragReductionCurve {
    fn default() -> Self {
        DragReductionCurve {
            leader: vec![(5.0, 0.08), (10.0, 0.06), (20.0, 0.04), (40.0, 0.02), (80.0, 0.0)],
            trailing: vec![
                (5.0, 0.42),
                (10.0, 0.36),
                (20.0, 0.28),
                (30.0, 0.21),
                (40.0, 0.16),
                (60.0, 0.11),
                (80.0, 0.07),
            ],
            multiplier: 1.0,
        }
    }
}

impl DragReductionCurve {
    pub fn validate(&self) -> Result<(), FuelError> {
        for t in [&self.leader, &self.trailing] {
            let ok = !t.is_empty()
                && t.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 <= w[0].1)
                && t.iter().all(|(g, f)| *g >= 0.0 && (0.0..1.0).contains(f));
            if !ok {
                return Err(FuelError::BadTable);
            }
        }
        if !(self.multiplier > 0.0) {
            return Err(FuelError::Invalid("drag multiplier must be > 0"));
        }
        Ok(())
    }

    pub fn with_multiplier(&self, multiplier: f64) -> Self {
        DragReductionCurve { multiplier, ..self.clone() }
    }
}

fn interpolate(table: &[(f64, f64)], gap: f64) -> f64 {
    let (first, last) = (table[0], table[table.len() - 1]);
    if gap <= first.0 {
        return first.1;
    }
    if gap > last.0 {
        // the curve fades out beyond its last knot
        return 0.0;
    }
    let i = table.partition_point(|(g, _)| *g < gap);
    if table[i].0 == gap {
        return table[i].1;
    }
    let (g1, f1) = table[i - 1];
    let (g2, f2) = table[i];
    f1 + (f2 - f1) * (gap - g1) / (g2 - g1)
}

/// Drag reduction fraction at `gap` for a vehicle in `position`.
pub fn drag_reduction(gap: f64, position: Position, curve: &DragReductionCurve) -> f64 {
    match position {
        Position::Leader => interpolate(&curve.leader, gap),
        // keep below 1 so some drag always remains
        Position::Trailing => (interpolate(&curve.trailing, gap) * curve.multiplier).min(0.99),
    }
}

/// Tractive power (W) on a flat road.
pub fn tractive_power(v: f64, gap: f64, position: Position, params: &AeroParams, curve: &DragReductionCurve) -> f64 {
    let phi = drag_reduction(gap, position, curve);
    power_with_reduction(v, phi, params)
}

pub fn power_with_reduction(v: f64, phi: f64, params: &AeroParams) -> f64 {
    let rolling = params.mass * GRAVITY * params.c_rr;
    let aero = 0.5 * params.air_density * params.cd0 * (1.0 - phi) * params.frontal_area * v * v;
    (rolling + aero) * v
}

/// Fuel rate in L/s for a given tractive power.
pub fn fuel_rate(power: f64, params: &AeroParams) -> f64 {
    power / (params.drivetrain_efficiency * params.fuel_energy_density)
}

fn platoon_fuel(gaps: &[f64], v: f64, params: &AeroParams, curve: &DragReductionCurve) -> f64 {
    let leader_gap = gaps.first().copied().unwrap_or(f64::INFINITY);
    let leader = fuel_rate(tractive_power(v, leader_gap, Position::Leader, params, curve), params);
    leader
        + gaps
            .iter()
            .map(|g| fuel_rate(tractive_power(v, *g, Position::Trailing, params, curve), params))
            .sum::<f64>()
}

/// Relative fuel saving of the whole platoon when its gaps change.
pub fn platoon_fuel_saving(
    gaps_baseline: &[f64],
    gaps_new: &[f64],
    v: f64,
    params: &AeroParams,
    curve: &DragReductionCurve,
) -> Result<f64, FuelError> {
    if gaps_baseline.len() != gaps_new.len() {
        return Err(FuelError::LengthMismatch(gaps_baseline.len(), gaps_new.len()));
    }
    if gaps_baseline == gaps_new {
        return Ok(0.0);
    }
    let base = platoon_fuel(gaps_baseline, v, params, curve);
    Ok(1.0 - platoon_fuel(gaps_new, v, params, curve) / base)
}

/// Result of fitting the trailing-table multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub multiplier: f64,
    pub savings: Vec<f64>,
    /// Largest tolerance-normalized error; at most 1 when every target holds.
    pub score: f64,
}

impl Calibration {
    pub fn satisfied(&self) -> bool {
        self.score <= 1.0
    }
}

/// One calibration target: gaps to compare with the baseline and the wanted saving.
#[derive(Debug, Clone, PartialEq)]
pub struct SavingTarget {
    pub gaps: Vec<f64>,
    pub saving: f64,
    pub tolerance: f64,
}

/// Scans multipliers in `[lo, hi]` and keeps the one with the smallest worst-case normalized error.
pub fn calibrate_multiplier(
    baseline: &[f64],
    targets: &[SavingTarget],
    v: f64,
    params: &AeroParams,
    curve: &DragReductionCurve,
    (lo, hi): (f64, f64),
) -> Result<Calibration, FuelError> {
    let steps = 1500;
    let mut best: Option<Calibration> = None;
    for i in 0..=steps {
        let m = lo + (hi - lo) * i as f64 / steps as f64;
        let c = curve.with_multiplier(m);
        let savings = targets
            .iter()
            .map(|t| platoon_fuel_saving(baseline, &t.gaps, v, params, &c))
            .collect::<Result<Vec<_>, _>>()?;
        let score = targets
            .iter()
            .zip(&savings)
            .map(|(t, s)| (s - t.saving).abs() / t.tolerance)
            .fold(0.0, f64::max);
        if best.as_ref().map_or(true, |b| score < b.score) {
            best = Some(Calibration { multiplier: m, savings, score });
        }
    }
    Ok(best.expect("at least one multiplier evaluated"))
}
