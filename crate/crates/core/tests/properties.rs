use proptest::prelude::*;
use stochexp::catalog::{catalog, catalog_get};
use stochexp::exponential::{attach_exponential, exponential_closed_form, exponential_from_sde, martingale_increments};
use stochexp::simulate::map_paths;
use stochexp::stats::McEstimate;
use stochexp::{apply_stopping, HistoryView, Simulator, StoppingRule, StoppingVariant, TimeGrid};

fn terminal_logs(name: &str, workers: usize) -> Vec<f64> {
    let spec = catalog_get(name).unwrap().model();
    let grid = TimeGrid::new(spec.horizon, 0.01).unwrap();
    let sim = Simulator::new(&spec, grid, 5).unwrap();
    map_paths(&sim, 64, workers, |b| {
        let inc = martingale_increments(&spec, &b, sim.quadrature())?;
        Ok(*exponential_closed_form(&inc).log_z.last().unwrap())
    })
    .unwrap()
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    for entry in catalog() {
        let one = terminal_logs(entry.name, 1);
        let three = terminal_logs(entry.name, 3);
        assert!(one.iter().zip(&three).all(|(a, b)| a.to_bits() == b.to_bits()), "{}", entry.name);
    }
}

#[test]
fn exponential_is_nonnegative_and_starts_at_one() {
    for entry in catalog() {
        let spec = entry.model();
        let grid = TimeGrid::new(spec.horizon, 0.01).unwrap();
        let sim = Simulator::new(&spec, grid, 9).unwrap();
        for i in 0..16 {
            let b = sim.path(i).unwrap();
            let inc = martingale_increments(&spec, &b, sim.quadrature()).unwrap();
            let cf = exponential_closed_form(&inc);
            assert_eq!(cf.log_z[0], 0.0, "{}", entry.name);
            assert!(cf.log_z.iter().all(|l| !l.is_nan()), "{}", entry.name);
            assert!(exponential_from_sde(&inc).z.iter().all(|&z| z >= 0.0), "{}", entry.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn history_lookup_is_piecewise_constant(len in 1usize..40, dt in 0.01f64..0.5, frac in 0.0f64..1.0) {
        let past: Vec<f64> = (0..len).map(|j| j as f64).collect();
        let x0 = [-1.0];
        let current = [len as f64];
        let s = len as f64 * dt;
        let view = HistoryView::new(&x0, &past, &current, dt, s, 0.0, 0.0);
        let u = frac * s;
        let j = (u / dt + 1e-9).floor() as usize;
        let expected = if j >= len { len as f64 } else { j as f64 };
        prop_assert_eq!(view.state_at(u)[0], expected);
        prop_assert_eq!(view.state_at(-u - 1.0)[0], -1.0);
        prop_assert!(view.try_state_at(s * 1.5 + 1.0).is_err());
    }

    #[test]
    fn stopping_freezes_state_and_exponential(seed in 0u64..1000, level in 1.05f64..3.0) {
        let spec = catalog_get("cev").unwrap().model();
        let grid = TimeGrid::new(spec.horizon, 0.02).unwrap();
        let sim = Simulator::new(&spec, grid, seed).unwrap();
        let mut b = sim.path(0).unwrap();
        attach_exponential(&sim, &mut b).unwrap();
        let rule = StoppingRule::new(level, StoppingVariant::Markov);
        let hit = rule.first_hit(&b);
        apply_stopping(&mut b, &rule);
        let z = b.z.clone().unwrap();
        if let Some(k) = hit {
            prop_assert_eq!(b.stop, Some(k));
            prop_assert!(z[k..].iter().all(|&v| v == z[k]));
            prop_assert!(z[..k].iter().all(|&v| v < level));
            let xk = b.state(k).to_vec();
            prop_assert!((k..=grid.steps).all(|j| b.state(j) == xk.as_slice()));
        } else {
            prop_assert!(b.stop.is_none());
        }
    }

    #[test]
    fn estimate_from_logs_matches_direct(logs in proptest::collection::vec(-20.0f64..20.0, 2..200)) {
        let values: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
        let a = McEstimate::from_logs(&logs);
        let b = McEstimate::from_values(&values);
        prop_assert!((a.mean - b.mean).abs() <= 1e-9 * b.mean.abs());
        prop_assert!((a.se - b.se).abs() <= 1e-6 * b.se.abs() + 1e-12 * b.mean.abs());
    }

    #[test]
    fn checkpoints_increase_to_the_horizon(steps in 1usize..5000, k in 1usize..50) {
        let grid = TimeGrid::new(1.0, 1.0 / steps as f64).unwrap();
        let c = grid.checkpoints(k);
        prop_assert_eq!(*c.last().unwrap(), grid.steps);
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }
}
