//! Batch evaluation of a policy over a grid of approach conditions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{ApproachCondition, EnvConfig, EpisodeRecord};
use crate::episode::{run_episode, ActionMode};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng::sweep_stream;

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    /// m/s
    pub speeds: Vec<f64>,
    /// deg
    pub angles_deg: Vec<f64>,
    pub trials: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            speeds: steps(1.5, 3.5, 0.25),
            angles_deg: steps(25.0, 90.0, 5.0),
            trials: 30,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParam("sweep.trials must be >= 1".into()));
        }
        if self.speeds.is_empty() || self.angles_deg.is_empty() {
            return Err(Error::InvalidParam("sweep grid needs at least one speed and angle".into()));
        }
        for &v in &self.speeds {
            for &a in &self.angles_deg {
                ApproachCondition { speed: v, angle_deg: a }.validate()?;
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.speeds.len() * self.angles_deg.len()
    }

    /// Cells are ordered speed-major.
    pub fn condition(&self, cell: usize) -> ApproachCondition {
        let na = self.angles_deg.len();
        ApproachCondition {
            speed: self.speeds[cell / na],
            angle_deg: self.angles_deg[cell % na],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub speed: f64,
    pub angle_deg: f64,
    pub trials: usize,
    pub n_fourleg: usize,
    pub n_twoleg: usize,
    pub n_fail: usize,
    /// Counted independently of the leg classes.
    pub n_bodycontact: usize,
    pub success_rate: f64,
}

impl CellStats {
    fn tally(condition: ApproachCondition, records: &[EpisodeRecord]) -> Self {
        let mut c = CellStats {
            speed: condition.speed,
            angle_deg: condition.angle_deg,
            trials: records.len(),
            n_fourleg: 0,
            n_twoleg: 0,
            n_fail: 0,
            n_bodycontact: 0,
            success_rate: 0.0,
        };
        for r in records {
            match r.outcome.n_legs {
                3.. => c.n_fourleg += 1,
                1 | 2 => c.n_twoleg += 1,
                0 => c.n_fail += 1,
            }
            if r.outcome.body_contact {
                c.n_bodycontact += 1;
            }
        }
        c.success_rate = c.n_fourleg as f64 / c.trials.max(1) as f64;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandingRateMap {
    pub seed: u64,
    pub mode: ActionMode,
    pub grid: SweepGrid,
    pub cells: Vec<CellStats>,
}

impl LandingRateMap {
    pub const CSV_HEADER: &'static str =
        "V,phi,trials,n_fourleg,n_twoleg,n_fail,n_bodycontact,success_rate";

    pub fn cell(&self, speed: f64, angle_deg: f64) -> Option<&CellStats> {
        self.cells
            .iter()
            .find(|c| (c.speed - speed).abs() < 1e-9 && (c.angle_deg - angle_deg).abs() < 1e-9)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for c in &self.cells {
            s += &format!(
                "{},{},{},{},{},{},{},{}\n",
                c.speed, c.angle_deg, c.trials, c.n_fourleg, c.n_twoleg, c.n_fail, c.n_bodycontact, c.success_rate
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates every (cell, trial) on its own stream using a pool of
/// `workers` threads. The result does not depend on `workers`.
pub fn run_sweep(
    policy: &PolicyParams,
    grid: &SweepGrid,
    cfg: &EnvConfig,
    mode: ActionMode,
    seed: u64,
    workers: usize,
) -> Result<(LandingRateMap, Vec<EpisodeRecord>)> {
    grid.validate()?;
    cfg.validate()?;
    policy.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let trials = grid.trials;
    let n = grid.n_cells() * trials;
    let records: Vec<EpisodeRecord> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let (cell, trial) = (k / trials, k % trials);
                let stream = sweep_stream(cell, trial, trials);
                run_episode(cfg, policy, mode, seed, stream, Some(grid.condition(cell)), false)
                    .map(|o| o.record)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let cells = records
        .chunks(trials)
        .enumerate()
        .map(|(cell, recs)| CellStats::tally(grid.condition(cell), recs))
        .collect();
    Ok((
        LandingRateMap {
            seed,
            mode,
            grid: grid.clone(),
            cells,
        },
        records,
    ))
}

/// Trigger-time observation and outcome of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub speed: f64,
    pub angle_deg: f64,
    pub tau_trg: Option<f64>,
    pub theta_x_trg: Option<f64>,
    pub d_ceil_trg: Option<f64>,
    /// N·m
    pub moment: Option<f64>,
    pub n_legs: u8,
    pub body_contact: bool,
    pub outcome: String,
}

impl RegionRow {
    pub const CSV_HEADER: &'static str =
        "V,phi,tau_trg,theta_x_trg,d_ceil_trg,My,n_legs,body_contact,outcome";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.speed,
            self.angle_deg,
            opt(self.tau_trg),
            opt(self.theta_x_trg),
            opt(self.d_ceil_trg),
            opt(self.moment),
            self.n_legs,
            self.body_contact as u8,
            self.outcome
        )
    }
}

/// Flattens episode records into the trigger-region table, keeping only
/// rows whose outcome label matches `outcome` when one is given.
pub fn export_policy_region(records: &[EpisodeRecord], outcome: Option<&str>) -> Result<Vec<RegionRow>> {
    if records.is_empty() {
        return Err(Error::InvalidParam("no episode records to export".into()));
    }
    if let Some(o) = outcome {
        if !["four_leg", "two_leg", "fail"].contains(&o) {
            return Err(Error::InvalidParam(format!("unknown outcome filter '{o}'")));
        }
    }
    Ok(records
        .iter()
        .filter(|r| outcome.is_none_or(|o| r.outcome.label() == o))
        .map(|r| RegionRow {
            speed: r.condition.speed,
            angle_deg: r.condition.angle_deg,
            tau_trg: r.trigger_obs.map(|o| o.tau),
            theta_x_trg: r.trigger_obs.map(|o| o.theta_x),
            d_ceil_trg: r.trigger_obs.map(|o| o.d_ceil),
            moment: r.moment,
            n_legs: r.outcome.n_legs,
            body_contact: r.outcome.body_contact,
            outcome: r.outcome.label().to_string(),
        })
        .collect())
}

pub fn region_csv(rows: &[RegionRow]) -> String {
    let mut s = String::from(RegionRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s += &r.csv_row();
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_extent() {
        let g = SweepGrid::default();
        assert_eq!(g.speeds.len(), 9);
        assert_eq!(g.angles_deg.len(), 14);
        assert_eq!(g.speeds[8], 3.5);
        assert_eq!(g.angles_deg[13], 90.0);
        assert_eq!(g.trials, 30);
        assert_eq!(g.condition(14), ApproachCondition { speed: 1.75, angle_deg: 25.0 });
    }

    #[test]
    fn zero_policy_never_lands() {
        let grid = SweepGrid { speeds: vec![2.0, 3.0], angles_deg: vec![40.0, 90.0], trials: 3 };
        let (map, recs) = run_sweep(
            &PolicyParams::zeros(8),
            &grid,
            &EnvConfig::default(),
            ActionMode::Deterministic,
            1,
            2,
        )
        .unwrap();
        assert_eq!(recs.len(), 12);
        for c in &map.cells {
            assert_eq!(c.n_fourleg, 0);
            assert_eq!(c.n_fourleg + c.n_twoleg + c.n_fail, c.trials);
        }
    }
}
