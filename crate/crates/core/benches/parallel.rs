//! Sequential versus rayon execution of the data-parallel loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use memborrow::bart::marginal_log_likelihood_prior_mc;
use memborrow::data::standardize_outcome;
use memborrow::model::ModelSpec;
use memborrow::seed::rng_from_seed;
use memborrow::sim::{gen_scenario, run_monte_carlo, Estimator, MemEstimator, Scenario, ScenarioConfig, Study, StudyData};
use memborrow::{Execution, Formula, MemSpace, ModelPrior, PriorKind};

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn formula() -> Formula {
    Formula::main_effects(&["x".to_string()])
}

fn prior_mc(c: &mut Criterion) {
    let d = gen_scenario(&ScenarioConfig::new(Scenario::Parallel, 0.0), &mut rng_from_seed(1)).unwrap();
    let spec = ModelSpec::bart(formula());
    let rows = d.rows_of(&[0, 1]);
    let design = spec.builder(&d).unwrap().build(&d, &rows);
    let (z, _) = standardize_outcome(&d.outcomes(&rows)).unwrap();
    let cfg = spec.bart.config(&design.values, &z, 1).unwrap();
    let mut g = c.benchmark_group("prior_mc_marginal");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| marginal_log_likelihood_prior_mc(&design, &z, &cfg, 100, &mut rng_from_seed(2), exec).unwrap())
        });
    }
    g.finish();
}

fn mem_space(c: &mut Criterion) {
    // three supplemental sources: eight patterns, eight distinct blocks
    let mut rng = rng_from_seed(3);
    let base = gen_scenario(&ScenarioConfig::new(Scenario::Parallel, 0.0), &mut rng).unwrap();
    let mut rows = base.rows().to_vec();
    for s in 2..4 {
        let extra = gen_scenario(&ScenarioConfig::new(Scenario::Parallel, 0.5 * s as f64), &mut rng).unwrap();
        rows.extend(extra.rows().iter().filter(|r| r.source == 1).cloned().map(|mut r| {
            r.source = s;
            r
        }));
    }
    let d = memborrow::Dataset::new(rows, vec!["P".into(), "S1".into(), "S2".into(), "S3".into()], vec!["x".into()]).unwrap();
    let spec = ModelSpec::blm(formula());
    let prior = ModelPrior::new(PriorKind::FlatHalf, 3).unwrap();
    let mut g = c.benchmark_group("mem_space_blm");
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| MemSpace::compute(&d, &spec, prior, &mut rng_from_seed(4), exec).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let study = Study {
        data: StudyData::Scenario { scenario: Scenario::Parallel, n_primary: 100, n_supplemental: 100 },
        deltas: vec![0.0],
        reps: 16,
    };
    let est: Vec<Box<dyn Estimator>> = vec![
        Box::new(MemEstimator::new(ModelSpec::blm(formula()), PriorKind::FlatHalf, true, 100)),
        Box::new(MemEstimator::new(ModelSpec::blm(formula()), PriorKind::FlatHalf, false, 100)),
    ];
    let mut g = c.benchmark_group("monte_carlo_blm");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_monte_carlo(&study, &est, 5, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, prior_mc, mem_space, monte_carlo);
criterion_main!(benches);
