//! Experiment sweeps: the named figure recipes plus custom parameter sweeps.
//!
//! Sweep points evaluate in parallel; output rows are ordered by sweep index
//! regardless of completion order. Infeasible points become error-marked rows
//! rather than aborting the sweep.

use rayon::prelude::*;

use prio_market_core::equilibrium::{cp_revenue, masses_multi};
use prio_market_core::market::validate_assumptions;
use prio_market_core::optimizer::{
    affordability_check, capacity_reallocation, menu_grid_defaults, offers, offers_delay_profile,
    offers_profit_gain, optimal_delay, prioritization_price, uniform_menu_optimize, CapacityPolicy,
    CostModel,
};
use prio_market_core::welfare::{total_welfare_closed, welfare_delta, WelfareMethod};
use prio_market_core::{CpProfile, DelayProfile, MarketError, MarketParams};

use crate::commands::{CliError, RunOptions};
use crate::rows::{Cell, CpColumns, ResultRow};
use crate::scenario::{parse_sweep_path, sweep_values, Scenario, ScenarioError};

/// All recognized sweep targets.
pub const RECIPES: [&str; 10] = [
    "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "fig11", "custom",
];

/// Runs a named recipe or the scenario's custom sweep.
pub fn run_sweep(
    scenario: &Scenario,
    which: &str,
    id: &str,
    opts: &RunOptions,
) -> Result<Vec<ResultRow>, CliError> {
    match which {
        "fig3" => Ok(delay_surface(scenario, id, 1.0, "fig3")),
        "fig4" => Ok(delay_surface(scenario, id, 2.0, "fig4")),
        "fig5" => Ok(welfare_throttling(scenario, id, opts)),
        "fig6" => Ok(isp_gain_vs_default_delay(scenario, id)),
        "fig7" => Ok(uniform_menu_sweep(scenario, id, MenuColumns::Offers)),
        "fig8" => Ok(uniform_menu_sweep(
            scenario,
            id,
            MenuColumns::DominantRevenue,
        )),
        "fig9" => Ok(capacity_sweep(scenario, id, opts, CapacityColumns::Users)),
        "fig10" => Ok(capacity_sweep(
            scenario,
            id,
            opts,
            CapacityColumns::PrimaryDeltas,
        )),
        "fig11" => Ok(capacity_welfare_sweep(scenario, id, opts)),
        "custom" => custom_sweep(scenario, id),
        other => Err(CliError::Scenario(ScenarioError::Invariant(format!(
            "unknown sweep recipe `{other}`; expected one of {RECIPES:?}"
        )))),
    }
}

fn mid_cp_index(m: usize) -> usize {
    (m / 2).max(2).min(m - 1)
}

/// Full per-CP block at a delay profile with the given contract prices.
fn block_at(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    prices: &[f64],
    accepted: &[bool],
) -> Result<Vec<CpColumns>, MarketError> {
    let masses = masses_multi(params, cps, delays)?;
    Ok(cps
        .iter()
        .map(|cp| {
            let j = cp.index;
            let mass = masses.get(j);
            CpColumns {
                d: delays.get(j),
                p: prices[j - 1],
                n: mass.n,
                n1: mass.n1,
                n2: mass.n2,
                revenue: cp_revenue(params, cp, mass, prices[j - 1], accepted[j - 1]),
            }
        })
        .collect())
}

/// fig3/fig4: the offered fast-lane delay for one mid CP as a function of its
/// subscription fee and ad rate (21 x 16 grid over [6,16] x [1,4]).
fn delay_surface(scenario: &Scenario, id: &str, c: f64, recipe: &str) -> Vec<ResultRow> {
    let m = scenario.market.m;
    let target = mid_cp_index(m);
    let s_values = sweep_values((6.0, 16.0), 21);
    let r_values = sweep_values((1.0, 4.0), 16);
    let points: Vec<(f64, f64)> = s_values
        .iter()
        .flat_map(|&s| r_values.iter().map(move |&r| (s, r)))
        .collect();
    let cost = CostModel::reciprocal(c);

    points
        .par_iter()
        .map(|&(s, r)| {
            let mut sc = scenario.clone();
            sc.cps[target - 1].s = s;
            sc.cps[target - 1].r = r;
            let params = sc.params();
            let cps = sc.cp_profiles();

            let mut row = ResultRow::new(id);
            row.sweep = vec![(format!("s_{target}"), s), (format!("r_{target}"), r)];
            row.notes = Some(format!("recipe={recipe};cost_c={c};target={target}"));
            row.extras = vec![
                ("d_star".into(), Cell::Empty),
                ("p_star".into(), Cell::Empty),
                ("affordable".into(), Cell::Empty),
                ("afford_margin".into(), Cell::Empty),
            ];

            let built = (|| -> Result<ResultRow, MarketError> {
                let cp = &cps[target - 1];
                let d_star = optimal_delay(&params, cp, &cost)?;
                let afford = affordability_check(&params, cp, &cost)?;
                let mut delays = DelayProfile::uniform(&params);
                let mut prices = vec![0.0; m];
                let mut accepted = vec![false; m];
                let p_star = if d_star < params.default_delay {
                    delays.set(target, d_star);
                    let p = prioritization_price(&params, cp, d_star)?;
                    prices[target - 1] = p;
                    accepted[target - 1] = true;
                    p
                } else {
                    0.0
                };
                let mut row = row.clone();
                row.regime = Some(validate_assumptions(&params, &cps).regime);
                row.per_cp = Some(block_at(&params, &cps, &delays, &prices, &accepted)?);
                let gain = if accepted[target - 1] {
                    let n_target = masses_multi(&params, &cps, &delays)?.get(target).n;
                    params.traffic_rate
                        * n_target
                        * (p_star - cost.cost(delays.get(target), params.default_delay))
                } else {
                    0.0
                };
                row.isp_profit = Some(params.access_fee + gain);
                row.welfare_closed = Some(total_welfare_closed(&params, &cps, &delays)?.total);
                row.extras = vec![
                    ("d_star".into(), Cell::Num(d_star)),
                    ("p_star".into(), Cell::Num(p_star)),
                    ("affordable".into(), Cell::Int(afford.affordable as u64)),
                    ("afford_margin".into(), Cell::Num(afford.margin)),
                ];
                Ok(row)
            })();
            built.unwrap_or_else(|e| row.with_error(e.to_string()))
        })
        .collect()
}

/// fig5: welfare deltas for (a) two prioritized CPs, (b) one, and (c) one
/// prioritized with every other CP throttled by 1%.
fn welfare_throttling(scenario: &Scenario, id: &str, opts: &RunOptions) -> Vec<ResultRow> {
    let m = scenario.market.m;
    let cost = CostModel::reciprocal(2.0);
    let s_values = sweep_values((10.0, 16.0), 13);
    let grid = opts.grid;

    s_values
        .par_iter()
        .map(|&s| {
            let mut sc = scenario.clone();
            sc.cps[0].s = s;
            sc.cps[1].s = s;
            for cp in sc.cps.iter_mut().skip(2) {
                cp.s = 6.0;
            }
            let params = sc.params();
            let cps = sc.cp_profiles();

            let mut row = ResultRow::new(id);
            row.sweep = vec![("s_12".into(), s)];
            row.notes = Some(format!("recipe=fig5;cost_c=2;throttle=1.01*d0;grid={grid}"));
            row.extras = vec![
                ("d_star_1".into(), Cell::Empty),
                ("d_star_2".into(), Cell::Empty),
                ("delta_both_closed".into(), Cell::Empty),
                ("delta_both_numeric".into(), Cell::Empty),
                ("delta_single_closed".into(), Cell::Empty),
                ("delta_single_numeric".into(), Cell::Empty),
                ("delta_throttle_closed".into(), Cell::Empty),
                ("delta_throttle_numeric".into(), Cell::Empty),
            ];

            let built = (|| -> Result<ResultRow, MarketError> {
                let d0 = params.default_delay;
                let d1 = optimal_delay(&params, &cps[0], &cost)?;
                let d2 = optimal_delay(&params, &cps[1], &cost)?;
                let defaults = DelayProfile::uniform(&params);

                let mut both = DelayProfile::uniform(&params);
                both.set(1, d1);
                both.set(2, d2);
                let mut single = DelayProfile::uniform(&params);
                single.set(2, d2);
                let mut throttled_delays = vec![1.01 * d0; m];
                throttled_delays[1] = d2;
                let throttled = DelayProfile::with_throttling(throttled_delays)?;

                let numeric = WelfareMethod::Numeric { grid };
                let mut row = row.clone();
                row.regime = Some(validate_assumptions(&params, &cps).regime);
                row.extras = vec![
                    ("d_star_1".into(), Cell::Num(d1)),
                    ("d_star_2".into(), Cell::Num(d2)),
                    (
                        "delta_both_closed".into(),
                        Cell::Num(welfare_delta(
                            &params,
                            &cps,
                            &defaults,
                            &both,
                            WelfareMethod::Closed,
                        )?),
                    ),
                    (
                        "delta_both_numeric".into(),
                        Cell::Num(welfare_delta(&params, &cps, &defaults, &both, numeric)?),
                    ),
                    (
                        "delta_single_closed".into(),
                        Cell::Num(welfare_delta(
                            &params,
                            &cps,
                            &defaults,
                            &single,
                            WelfareMethod::Closed,
                        )?),
                    ),
                    (
                        "delta_single_numeric".into(),
                        Cell::Num(welfare_delta(&params, &cps, &defaults, &single, numeric)?),
                    ),
                    (
                        "delta_throttle_closed".into(),
                        Cell::Num(welfare_delta(
                            &params,
                            &cps,
                            &defaults,
                            &throttled,
                            WelfareMethod::Closed,
                        )?),
                    ),
                    (
                        "delta_throttle_numeric".into(),
                        Cell::Num(welfare_delta(
                            &params, &cps, &defaults, &throttled, numeric,
                        )?),
                    ),
                ];
                Ok(row)
            })();
            built.unwrap_or_else(|e| row.with_error(e.to_string()))
        })
        .collect()
}

/// fig6: ISP profit gain from offering prioritization, against the default
/// tier's delay, for three subscription-fee levels.
fn isp_gain_vs_default_delay(scenario: &Scenario, id: &str) -> Vec<ResultRow> {
    let cost = CostModel::reciprocal(1.0);
    let s_levels = [6.0, 10.0, 16.0];
    let d0_values = sweep_values((5.4, 7.3), 20);
    let points: Vec<(f64, f64)> = s_levels
        .iter()
        .flat_map(|&s| d0_values.iter().map(move |&d| (s, d)))
        .collect();

    points
        .par_iter()
        .map(|&(s, d0)| {
            let mut sc = scenario.clone();
            for cp in sc.cps.iter_mut() {
                cp.s = s;
            }
            sc.market.d0 = d0;
            let params = sc.params();
            let cps = sc.cp_profiles();

            let mut row = ResultRow::new(id);
            row.sweep = vec![("s_all".into(), s), ("d0".into(), d0)];
            row.notes = Some("recipe=fig6;cost_c=1".into());
            row.extras = vec![("profit_gain".into(), Cell::Empty)];

            let built = (|| -> Result<ResultRow, MarketError> {
                let offs = offers(&params, &cps, &cost, false)?;
                let delays = offers_delay_profile(&params, &offs);
                let prices: Vec<f64> = offs.iter().map(|o| o.p_star).collect();
                let accepted: Vec<bool> = offs.iter().map(|o| o.accepted).collect();
                let gain = offers_profit_gain(&params, &cps, &offs, &cost);
                let mut row = row.clone();
                row.regime = Some(validate_assumptions(&params, &cps).regime);
                row.per_cp = Some(block_at(&params, &cps, &delays, &prices, &accepted)?);
                row.isp_profit = Some(params.access_fee + gain);
                row.welfare_closed = Some(total_welfare_closed(&params, &cps, &delays)?.total);
                row.extras = vec![("profit_gain".into(), Cell::Num(gain))];
                Ok(row)
            })();
            built.unwrap_or_else(|e| row.with_error(e.to_string()))
        })
        .collect()
}

enum MenuColumns {
    Offers,
    DominantRevenue,
}

/// fig7/fig8: CP-independent menu pricing while one CP grows dominant.
fn uniform_menu_sweep(scenario: &Scenario, id: &str, columns: MenuColumns) -> Vec<ResultRow> {
    let m = scenario.market.m;
    let target = mid_cp_index(m);
    let cost = CostModel::reciprocal(1.0);
    let s_values = sweep_values((12.0, 18.0), 13);
    let r_values = sweep_values((2.0, 4.0), 11);
    let points: Vec<(f64, f64)> = s_values
        .iter()
        .flat_map(|&s| r_values.iter().map(move |&r| (s, r)))
        .collect();

    points
        .par_iter()
        .map(|&(s, r)| {
            let mut sc = scenario.clone();
            sc.cps[target - 1].s = s;
            sc.cps[target - 1].r = r;
            let params = sc.params();
            let cps = sc.cp_profiles();

            let recipe = match columns {
                MenuColumns::Offers => "fig7",
                MenuColumns::DominantRevenue => "fig8",
            };
            let mut row = ResultRow::new(id);
            row.sweep = vec![(format!("s_{target}"), s), (format!("r_{target}"), r)];
            row.notes = Some(format!(
                "recipe={recipe};cost_c=1;menu_grid=128x512;p_max=2x_discriminatory;target={target}"
            ));
            let placeholder = |labels: &[&str]| -> Vec<(String, Cell)> {
                labels
                    .iter()
                    .map(|l| (l.to_string(), Cell::Empty))
                    .collect()
            };
            row.extras = match columns {
                MenuColumns::Offers => placeholder(&[
                    "menu_d",
                    "menu_p",
                    "acceptance_count",
                    "acceptance_set",
                    "menu_profit_gain",
                    "disc_profit_gain",
                ]),
                MenuColumns::DominantRevenue => placeholder(&[
                    "menu_d",
                    "menu_p",
                    "revenue_target_menu",
                    "revenue_target_disc",
                ]),
            };

            let built = (|| -> Result<ResultRow, MarketError> {
                let (d_grid, p_grid) = menu_grid_defaults(&params, &cps, &cost)?;
                let menu = uniform_menu_optimize(&params, &cps, &cost, &d_grid, &p_grid)?;
                let disc = offers(&params, &cps, &cost, false)?;
                let disc_gain = offers_profit_gain(&params, &cps, &disc, &cost);

                let mut delays = DelayProfile::uniform(&params);
                let mut prices = vec![0.0; m];
                let mut accepted = vec![false; m];
                for &j in &menu.accepted {
                    delays.set(j, menu.delay);
                    prices[j - 1] = menu.price;
                    accepted[j - 1] = true;
                }
                let mut row = row.clone();
                row.regime = Some(validate_assumptions(&params, &cps).regime);
                row.per_cp = Some(block_at(&params, &cps, &delays, &prices, &accepted)?);
                row.isp_profit = Some(params.access_fee + menu.profit);
                row.welfare_closed = Some(total_welfare_closed(&params, &cps, &delays)?.total);
                row.extras = match columns {
                    MenuColumns::Offers => vec![
                        ("menu_d".into(), Cell::Num(menu.delay)),
                        ("menu_p".into(), Cell::Num(menu.price)),
                        (
                            "acceptance_count".into(),
                            Cell::Int(menu.accepted.len() as u64),
                        ),
                        (
                            "acceptance_set".into(),
                            Cell::Text(
                                menu.accepted
                                    .iter()
                                    .map(|j| j.to_string())
                                    .collect::<Vec<_>>()
                                    .join("|"),
                            ),
                        ),
                        ("menu_profit_gain".into(), Cell::Num(menu.profit)),
                        ("disc_profit_gain".into(), Cell::Num(disc_gain)),
                    ],
                    MenuColumns::DominantRevenue => {
                        let menu_masses = masses_multi(&params, &cps, &delays)?;
                        let r_menu = cp_revenue(
                            &params,
                            &cps[target - 1],
                            menu_masses.get(target),
                            prices[target - 1],
                            accepted[target - 1],
                        );
                        let disc_delays = offers_delay_profile(&params, &disc);
                        let disc_masses = masses_multi(&params, &cps, &disc_delays)?;
                        let o = disc[target - 1];
                        let r_disc = cp_revenue(
                            &params,
                            &cps[target - 1],
                            disc_masses.get(target),
                            o.p_star,
                            o.accepted,
                        );
                        vec![
                            ("menu_d".into(), Cell::Num(menu.delay)),
                            ("menu_p".into(), Cell::Num(menu.price)),
                            ("revenue_target_menu".into(), Cell::Num(r_menu)),
                            ("revenue_target_disc".into(), Cell::Num(r_disc)),
                        ]
                    }
                };
                Ok(row)
            })();
            built.unwrap_or_else(|e| row.with_error(e.to_string()))
        })
        .collect()
}

enum CapacityColumns {
    Users,
    PrimaryDeltas,
}

/// fig9/fig10: masses and primary-user shifts when one CP is prioritized by
/// re-allocating existing capacity (non-targets get throttled).
fn capacity_sweep(
    scenario: &Scenario,
    id: &str,
    _opts: &RunOptions,
    columns: CapacityColumns,
) -> Vec<ResultRow> {
    let m = scenario.market.m;
    let target = mid_cp_index(m);
    let d_values = sweep_values((4.0, 6.0), 21);
    let params = scenario.params();
    let cps = scenario.cp_profiles();

    d_values
        .par_iter()
        .map(|&d_target| {
            let recipe = match columns {
                CapacityColumns::Users => "fig9",
                CapacityColumns::PrimaryDeltas => "fig10",
            };
            let mut row = ResultRow::new(id);
            row.sweep = vec![("d_target".into(), d_target)];
            row.notes = Some(format!(
                "recipe={recipe};policy=proportional;target={target}"
            ));
            let mut labels = vec![
                ("welfare_delta_closed".to_string(), Cell::Empty),
                ("capacity_total".to_string(), Cell::Empty),
                ("max_residual".to_string(), Cell::Empty),
            ];
            if matches!(columns, CapacityColumns::PrimaryDeltas) {
                for j in 1..=m {
                    labels.push((format!("dn1_{j}"), Cell::Empty));
                }
            }
            row.extras = labels;

            let built = (|| -> Result<ResultRow, MarketError> {
                let plan = capacity_reallocation(
                    &params,
                    &cps,
                    target,
                    d_target,
                    CapacityPolicy::Proportional,
                )?;
                let defaults = DelayProfile::uniform(&params);
                let masses = masses_multi(&params, &cps, &plan.delays)?;
                let base = masses_multi(&params, &cps, &defaults)?;
                let prices = vec![0.0; m];
                let accepted = vec![false; m];
                let delta = welfare_delta(
                    &params,
                    &cps,
                    &defaults,
                    &plan.delays,
                    WelfareMethod::Closed,
                )?;

                let mut row = row.clone();
                row.regime = Some(validate_assumptions(&params, &cps).regime);
                row.per_cp = Some(block_at(&params, &cps, &plan.delays, &prices, &accepted)?);
                let mut extras = vec![
                    ("welfare_delta_closed".to_string(), Cell::Num(delta)),
                    ("capacity_total".to_string(), Cell::Num(plan.total)),
                    (
                        "max_residual".to_string(),
                        Cell::Num(plan.residuals.iter().copied().fold(0.0, f64::max)),
                    ),
                ];
                if matches!(columns, CapacityColumns::PrimaryDeltas) {
                    for j in 1..=m {
                        extras.push((
                            format!("dn1_{j}"),
                            Cell::Num(masses.get(j).n1 - base.get(j).n1),
                        ));
                    }
                }
                row.extras = extras;
                Ok(row)
            })();
            built.unwrap_or_else(|e| row.with_error(e.to_string()))
        })
        .collect()
}

/// fig11: welfare change under capacity reallocation for three
/// subscription-fee levels of the prioritized CP.
fn capacity_welfare_sweep(scenario: &Scenario, id: &str, opts: &RunOptions) -> Vec<ResultRow> {
    let m = scenario.market.m;
    let target = mid_cp_index(m);
    let s_levels = [10.0, 13.0, 16.0];
    let d_values = sweep_values((4.0, 6.0), 21);
    let points: Vec<(f64, f64)> = s_levels
        .iter()
        .flat_map(|&s| d_values.iter().map(move |&d| (s, d)))
        .collect();
    let grid = opts.grid;

    points
        .par_iter()
        .map(|&(s, d_target)| {
            let mut sc = scenario.clone();
            sc.cps[target - 1].s = s;
            let params = sc.params();
            let cps = sc.cp_profiles();

            let mut row = ResultRow::new(id);
            row.sweep = vec![(format!("s_{target}"), s), ("d_target".into(), d_target)];
            row.notes = Some(format!(
                "recipe=fig11;policy=proportional;target={target};grid={grid}"
            ));
            row.extras = vec![
                ("welfare_delta_closed".into(), Cell::Empty),
                ("welfare_delta_numeric".into(), Cell::Empty),
                ("capacity_total".into(), Cell::Empty),
                ("max_residual".into(), Cell::Empty),
            ];

            let built = (|| -> Result<ResultRow, MarketError> {
                let plan = capacity_reallocation(
                    &params,
                    &cps,
                    target,
                    d_target,
                    CapacityPolicy::Proportional,
                )?;
                let defaults = DelayProfile::uniform(&params);
                let closed = welfare_delta(
                    &params,
                    &cps,
                    &defaults,
                    &plan.delays,
                    WelfareMethod::Closed,
                )?;
                let numeric = welfare_delta(
                    &params,
                    &cps,
                    &defaults,
                    &plan.delays,
                    WelfareMethod::Numeric { grid },
                )?;
                let prices = vec![0.0; m];
                let accepted = vec![false; m];
                let mut row = row.clone();
                row.regime = Some(validate_assumptions(&params, &cps).regime);
                row.per_cp = Some(block_at(&params, &cps, &plan.delays, &prices, &accepted)?);
                row.extras = vec![
                    ("welfare_delta_closed".into(), Cell::Num(closed)),
                    ("welfare_delta_numeric".into(), Cell::Num(numeric)),
                    ("capacity_total".into(), Cell::Num(plan.total)),
                    (
                        "max_residual".into(),
                        Cell::Num(plan.residuals.iter().copied().fold(0.0, f64::max)),
                    ),
                ];
                Ok(row)
            })();
            built.unwrap_or_else(|e| row.with_error(e.to_string()))
        })
        .collect()
}

/// Custom sweep along the scenario's own sweep spec: a closed-form
/// equilibrium row per point.
fn custom_sweep(scenario: &Scenario, id: &str) -> Result<Vec<ResultRow>, CliError> {
    let sweep = scenario.sweep.as_ref().ok_or_else(|| {
        CliError::Scenario(ScenarioError::Invariant(
            "custom sweep needs a `sweep` section in the scenario".into(),
        ))
    })?;
    let path = parse_sweep_path(&sweep.path, scenario.market.m)?;
    let values = sweep_values(sweep.range, sweep.steps);
    let label = path.label();

    Ok(values
        .par_iter()
        .map(|&v| {
            let sc = path.apply(scenario, v);
            let mut row = ResultRow::new(id);
            row.sweep = vec![(label.clone(), v)];
            row.notes = Some(format!("recipe=custom;path={}", sweep.path));

            let built = (|| -> Result<ResultRow, CliError> {
                sc.validate()?;
                let params = sc.params();
                let cps = sc.cp_profiles();
                let delays = sc.delay_profile(false)?;
                let regime = validate_assumptions(&params, &cps).regime;
                let prices = vec![0.0; params.cp_count];
                let accepted = vec![false; params.cp_count];
                let mut row = row.clone();
                row.regime = Some(regime);
                row.per_cp = Some(
                    block_at(&params, &cps, &delays, &prices, &accepted)
                        .map_err(CliError::Solver)?,
                );
                row.isp_profit = Some(params.access_fee);
                row.welfare_closed = Some(
                    total_welfare_closed(&params, &cps, &delays)
                        .map_err(CliError::Solver)?
                        .total,
                );
                Ok(row)
            })();
            built.unwrap_or_else(|e| row.with_error(e.to_string()))
        })
        .collect())
}
