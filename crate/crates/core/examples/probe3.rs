use multilevel::estimator::ConvergenceSettings;
use multilevel::ordinal::{fit_ordered_probit_pql, fit_ordered_probit_quadrature, OrderedProbitSpec};
use multilevel::simulate::{simulate_nested, LevelConfig, OrdinalSimConfig, SimulationConfig};

fn main() {
    // 2-level with varying group sizes: where does PQL2 break?
    for size in [3usize, 5, 10, 20] {
        let cfg = SimulationConfig {
            seed: 99,
            levels: vec![
                LevelConfig { name: "g".into(), count: 2400 / size, count_max: None },
                LevelConfig { name: "p".into(), count: size, count_max: None },
            ],
            variances: vec![0.3, 1.0],
            intercept: 0.0,
            beta: vec![],
            covariates: vec![],
            response: "y".into(),
            ordinal: Some(OrdinalSimConfig { cutpoints: vec![-1.0, 0.2, 1.1] }),
        };
        let ds = simulate_nested(&cfg).unwrap();
        let spec = OrderedProbitSpec {
            response: "y".into(),
            random_levels: vec!["g".into(), "p".into()],
        };
        let p1 = fit_ordered_probit_pql(&ds, &spec, 1, &ConvergenceSettings::default()).unwrap();
        let p2 = fit_ordered_probit_pql(&ds, &spec, 2, &ConvergenceSettings::default()).unwrap();
        let q = fit_ordered_probit_quadrature(&ds, &spec, 21).unwrap();
        println!(
            "size {size:2}: mql1 {:.4} ({}) pql2 {:.4} ({}) quadrature {:.4}",
            p1.varcomps[0].variance,
            p1.converged,
            p2.varcomps[0].variance,
            p2.converged,
            q.varcomps[0].variance
        );
    }
}
