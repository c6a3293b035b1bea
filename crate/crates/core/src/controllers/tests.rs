use proptest::prelude::*;

use super::*;
use crate::env::{step_week, EnvState, ExecutionConfig, RegimeKind, WeeklyAggregate};
use crate::response::CtrlTheta;

fn history_from_spends(spends: &[f64]) -> HistoryDataset<f64> {
    let n = spends.len() as i64;
    let weekly = spends
        .iter()
        .enumerate()
        .map(|(i, &s)| WeeklyAggregate {
            week: i as i64 + 1 - n,
            planned: s,
            spend: s,
            ret: s.sqrt(),
        })
        .collect();
    HistoryDataset {
        daily_spend: vec![],
        daily_return: vec![],
        years: spends.len() / 52,
        weekly,
        end_state: EnvState {
            theta: EnvTheta::new(1.0, 1.0, 1.0).unwrap(),
            alpha: 0.5,
            last_day_spend: 0.0,
        },
    }
}

fn open_regime() -> RegimeSpec<f64> {
    RegimeSpec {
        smooth_lower: 1.0,
        smooth_upper: 1e6,
        ..RegimeSpec::static_regime()
    }
}

#[test]
fn pacing_ratio_fallbacks_and_history() {
    let empty = history_from_spends(&[]);
    let r = compute_pacing_ratios(&empty, 1, 12).unwrap();
    assert_eq!(r.source, RatioSource::Uniform);
    assert!(r.ratios.iter().all(|&p| p == 1.0 / 12.0));

    let flat = history_from_spends(&[700.0; 104]);
    let r = compute_pacing_ratios(&flat, 1, 12).unwrap();
    assert_eq!(r.source, RatioSource::Historical);
    assert!(r.ratios.iter().all(|&p| (p - 1.0 / 12.0).abs() < 1e-12));

    // quarter weeks of last year (keys −51..−40) decline by 0.8 per week
    let mut spends = vec![500.0; 52];
    for t in 0..12 {
        spends[t] = 1000.0 * 0.8f64.powi(t as i32 + 1);
    }
    let r = compute_pacing_ratios(&history_from_spends(&spends), 1, 12).unwrap();
    let total: f64 = (1..=12).map(|w| 0.8f64.powi(w)).sum();
    for (t, p) in r.ratios.iter().enumerate() {
        assert!((p - 0.8f64.powi(t as i32 + 1) / total).abs() < 1e-12);
    }
}

#[test]
fn baseline_examples() {
    let ratios = PacingRatios::<f64>::uniform(12);
    let mut st = QuarterState::new(1200.0, 12, 100.0, 100.0 / 7.0).unwrap();
    assert_eq!(baseline_plan_week(&st, &ratios).unwrap(), 100.0);
    st.week = 2;
    st.remaining_budget = 1090.0;
    let b = baseline_plan_week(&st, &ratios).unwrap();
    assert!((b - 1090.0 * (1.0 / 12.0) / (11.0 / 12.0)).abs() < 1e-12);
    assert!((b - 99.0909).abs() < 1e-4);
    st.week = 12;
    st.remaining_budget = 87.5;
    assert_eq!(baseline_plan_week(&st, &ratios).unwrap(), 87.5);

    let zero_tail = PacingRatios {
        ratios: [vec![1.0], vec![0.0; 11]].concat(),
        source: RatioSource::Historical,
    };
    st.week = 5;
    st.remaining_budget = 300.0;
    assert_eq!(baseline_plan_week(&st, &zero_tail).unwrap(), 300.0);
}

#[test]
fn baseline_plans_exactly_the_remainder_without_noise() {
    let ratios = PacingRatios {
        ratios: (1..=12).map(|w| 0.9f64.powi(w)).map(|x| x / (1..=12).map(|w| 0.9f64.powi(w)).sum::<f64>()).collect(),
        source: RatioSource::Historical,
    };
    let mut st = QuarterState::new(5000.0, 12, 400.0, 0.0).unwrap();
    while !st.is_done() {
        // planning the rest now with the same rule adds up to B_rem
        let mut probe = st.clone();
        let mut planned = 0.0;
        while !probe.is_done() {
            let b = baseline_plan_week(&probe, &ratios).unwrap();
            planned += b;
            probe.apply(record(b, b)).unwrap();
        }
        assert!((planned - st.remaining_budget).abs() < 1e-9 * 5000.0);
        let b = baseline_plan_week(&st, &ratios).unwrap();
        st.apply(record(b, b)).unwrap();
    }
    assert!(st.remaining_budget.abs() < 1e-9);
}

fn record(planned: f64, spend: f64) -> WeekRecord<f64> {
    WeekRecord {
        week: 0,
        planned_budget: planned,
        realized_spend: spend,
        realized_return: 0.0,
        daily_spend: [spend / 7.0; 7],
        daily_return: [0.0; 7],
        end_of_week_daily_spend: spend / 7.0,
    }
}

#[test]
fn accounting_identity_is_exact() {
    let mut st = QuarterState::new(1000.0, 3, 300.0, 0.0).unwrap();
    for s in [310.3, 299.7, 123.456] {
        let before = st.remaining_budget;
        st.apply(record(300.0, s)).unwrap();
        assert_eq!(st.remaining_budget, before - s);
    }
    assert!(st.is_done());
    assert!(st.apply(record(1.0, 1.0)).is_err());
}

fn surrogate(thetas: Vec<CtrlTheta<f64>>) -> HorizonForecast<f64> {
    HorizonForecast::Surrogate(ThetaForecast::new(1, thetas).unwrap())
}

#[test]
fn mpc_single_week_hits_tightest_upper_bound() {
    let th = CtrlTheta::new(500.0, 0.002).unwrap();
    let regime = RegimeSpec::static_regime();
    let mut st = QuarterState::new(10_000.0, 12, 100.0, 0.0).unwrap();
    st.week = 12;
    let out = mpc_plan_week(&st, &surrogate(vec![th]), &SpendPredictor::Identity, &regime).unwrap();
    assert!((out.budget - 130.0).abs() < 1e-5, "{}", out.budget);
    st.remaining_budget = 90.0;
    let out = mpc_plan_week(&st, &surrogate(vec![th]), &SpendPredictor::Identity, &regime).unwrap();
    assert!((out.budget - 90.0).abs() < 1e-5);
}

#[test]
fn mpc_two_week_closed_form() {
    let g2 = (-0.2f64).exp();
    let f = surrogate(vec![
        CtrlTheta::new(100.0, 0.01).unwrap(),
        CtrlTheta::new(100.0 * g2, 0.01).unwrap(),
    ]);
    let mut st = QuarterState::new(100.0, 2, 50.0, 0.0).unwrap();
    st.remaining_budget = 100.0;
    let out = mpc_plan_week(&st, &f, &SpendPredictor::Identity, &open_regime()).unwrap();
    assert!((out.budget - 60.0).abs() < 1e-4, "{}", out.budget);
    assert!((out.solution.budgets[1] - 40.0).abs() < 1e-4);
}

#[test]
fn mpc_identical_forecasts_split_uniformly() {
    let th = CtrlTheta::new(400.0, 0.003).unwrap();
    let st = QuarterState::new(1200.0, 6, 200.0, 0.0).unwrap();
    let out = mpc_plan_week(&st, &surrogate(vec![th; 6]), &SpendPredictor::Identity, &open_regime()).unwrap();
    for b in &out.solution.budgets {
        assert!((b - 200.0).abs() < 1e-6);
    }
}

#[test]
fn mpc_rejects_wrong_horizon_and_relaxes_chains() {
    let th = CtrlTheta::new(400.0, 0.003).unwrap();
    let st = QuarterState::new(100.0, 4, 200.0, 0.0).unwrap();
    assert!(mpc_plan_week(&st, &surrogate(vec![th; 3]), &SpendPredictor::Identity, &open_regime()).is_err());
    // 0.7·200 + 0.49·200 + … exceeds 100
    let out = mpc_plan_week(&st, &surrogate(vec![th; 4]), &SpendPredictor::Identity, &RegimeSpec::static_regime()).unwrap();
    assert!(out.relaxed);
    assert_eq!(out.solution.status, SolveStatus::RelaxedFeasible);
    assert!(out.solution.budgets.iter().sum::<f64>() <= 100.0 * (1.0 + 1e-6));
}

#[test]
fn spend_predictors() {
    assert_eq!(spend_predictor_identity(250.0), 250.0);
    for s0 in [0.0f64, 40.0, 1e4] {
        assert!((spend_predictor_tracking(700.0, s0, 1.0) - 700.0).abs() < 1e-12);
    }
    let got = spend_predictor_tracking(700.0f64, 0.0, 0.5);
    assert!((got - 600.78125).abs() < 1e-12);
    // cross-check against the simulator's noise-free recursion
    let exec = ExecutionConfig {
        tracking_rate: 0.5,
        exec_noise_coeff: 0.0,
        obs_noise_sd: 0.0,
        alpha_drift_sigma: 0.0,
    };
    let th = EnvTheta::new(100.0, 0.01, 1.0).unwrap();
    for s0 in [0.0f64, 30.0, 250.0] {
        let rec = step_week(s0, 700.0, &exec, &th, 1.0, &crate::env::NoiseStream::new(1), 1).unwrap();
        assert!((spend_predictor_tracking(700.0, s0, 0.5) - rec.realized_spend).abs() < 1e-9);
    }
}

#[test]
fn tracking_predictor_changes_first_week_only() {
    let th = CtrlTheta::new(400.0, 0.003).unwrap();
    let st = QuarterState::new(1200.0, 3, 400.0, 0.0).unwrap();
    let pred = SpendPredictor::Tracking { alpha: 0.5 };
    let out = mpc_plan_week(&st, &surrogate(vec![th; 3]), &pred, &open_regime()).unwrap();
    let p = &out.solution.solved;
    assert!(p.weeks[0].spend.slope < 1.0);
    assert_eq!(p.weeks[1].spend, SpendMap::identity());
    assert!((p.total_spend(&out.solution.budgets) - 1200.0).abs() < 1e-3);
}

#[test]
fn oracle_forecast_passes_truth_through() {
    let regime = RegimeSpec::seasonal(0.1, crate::env::DeclineForm::Exponential);
    let theta = EnvTheta::new(800.0, 0.001, 1.6).unwrap();
    let truth: Vec<TrueWeek<f64>> = (1..=12)
        .map(|w| TrueWeek {
            theta,
            efficiency: crate::env::seasonal_factor(w, &regime),
        })
        .collect();
    let f = oracle_theta_forecast(&truth, 4, 9).unwrap();
    match &f {
        HorizonForecast::Truth(v) => {
            assert_eq!(v.len(), 9);
            assert_eq!(v[0].efficiency, (-0.4f64).exp());
        }
        _ => panic!("oracle must pass truth"),
    }
    assert!(oracle_theta_forecast(&truth, 5, 9).is_err());
    assert_eq!(regime.kind, RegimeKind::Seasonal);
}

#[test]
fn trace_csv_header() {
    let rows = vec![TraceRow {
        week: 1,
        planned: 100.0,
        realized_spend: 99.5,
        realized_return: 40.0,
        remaining_before: 1200.0,
        remaining_after: 1100.5,
        status: Some(SolveStatus::Optimal),
        relaxed: false,
    }];
    let mut buf = Vec::new();
    write_trace_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("week,planned,realized_spend"));
    assert!(text.contains("1,100,99.5,40,1200,1100.5,optimal,false"));
}

proptest! {
    #[test]
    fn baseline_scale_equivariance(
        c in 0.01f64..100.0,
        ratios in prop::collection::vec(0.01f64..1.0, 12),
        spends in prop::collection::vec(10.0f64..200.0, 11),
    ) {
        let total: f64 = ratios.iter().sum();
        let pr = PacingRatios { ratios: ratios.iter().map(|r| r / total).collect(), source: RatioSource::Historical };
        let mut a = QuarterState::new(1200.0, 12, 100.0, 0.0).unwrap();
        let mut b = QuarterState::new(1200.0 * c, 12, 100.0 * c, 0.0).unwrap();
        for &s in &spends {
            let pa = baseline_plan_week(&a, &pr).unwrap();
            let pb = baseline_plan_week(&b, &pr).unwrap();
            prop_assert!((pb - c * pa).abs() <= 1e-9 * (1.0 + pb.abs()));
            a.apply(record(pa, s)).unwrap();
            b.apply(record(pb, s * c)).unwrap();
        }
    }

    #[test]
    fn mpc_plans_are_feasible(
        rem in 10.0f64..5000.0, anchor in 1.0f64..800.0, week in 1usize..=12,
        rho in 50.0f64..2000.0, kappa in 1e-4f64..1e-2,
    ) {
        let mut st = QuarterState::new(rem, 12, anchor, 0.0).unwrap();
        st.week = week;
        let th = CtrlTheta::new(rho, kappa).unwrap();
        let out = mpc_plan_week(&st, &surrogate(vec![th; st.horizon()]), &SpendPredictor::Identity, &RegimeSpec::static_regime()).unwrap();
        prop_assert!(crate::solver::kkt_residual(&out.solution.solved, &out.solution.budgets).is_ok());
        prop_assert!(out.budget >= 0.0 && out.budget <= rem * (1.0 + 1e-6));
    }
}
