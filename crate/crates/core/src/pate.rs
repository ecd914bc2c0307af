//! Posterior of the population average treatment effect in the primary
//! source: per-draw conditional effects averaged with Bayesian-bootstrap
//! weights, mixed across exchangeability patterns.

use rand::{Rng, RngExt};

use crate::data::{Dataset, DesignBuilder, DesignMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mem::{pool, MemSpace};
use crate::model::{fit_block, ModelDraw, ModelSpec};
use crate::seed::substream;

/// Treated-versus-control contrast, optionally under enforced compliance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EstimandSpec {
    /// Sets the compliance indicator to 1 in both counterfactual arms.
    pub fix_compliant: bool,
}

/// Counterfactual designs for the same rows with treatment set to 1 and 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    pub treated: DesignMatrix,
    pub control: DesignMatrix,
}

impl Counterfactual {
    pub fn new(builder: &DesignBuilder, data: &Dataset, rows: &[usize], spec: EstimandSpec) -> Result<Self> {
        if spec.fix_compliant && !data.has_compliance() {
            return Err(Error::NoCompliance);
        }
        Ok(Counterfactual {
            treated: builder.counterfactual(data, rows, true, spec.fix_compliant),
            control: builder.counterfactual(data, rows, false, spec.fix_compliant),
        })
    }
}

/// Conditional treatment effect for each counterfactual row under one draw.
pub fn cate_draw(draw: ModelDraw<'_>, cf: &Counterfactual) -> Result<Vec<f64>> {
    let one = draw.conditional_mean(&cf.treated)?;
    let zero = draw.conditional_mean(&cf.control)?;
    Ok(one.iter().zip(&zero).map(|(a, b)| a - b).collect())
}

/// Flat-Dirichlet weights from the gaps of `n − 1` sorted uniforms.
pub fn bayesian_bootstrap_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("the Bayesian bootstrap needs at least one row"));
    }
    let mut u: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
    u.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    let mut w = Vec::with_capacity(n);
    for v in u.into_iter().chain(std::iter::once(1.0)) {
        w.push(v - prev);
        prev = v;
    }
    Ok(w)
}

/// Largest-remainder rounding of `weights · total`; ties go to the lower
/// index.
pub fn allocate(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &q in order.iter().cycle().take(total.saturating_sub(assigned)) {
        alloc[q] += 1;
    }
    alloc
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatePosterior {
    /// Draws in pattern order, in outcome units.
    pub draws: Vec<f64>,
    /// Draws contributed by each pattern.
    pub allocation: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PateSummary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, sample standard deviation and the equal-tailed interval of
/// probability `mass`.
pub fn summarize(post: &PatePosterior, mass: f64) -> Result<PateSummary> {
    let d = &post.draws;
    if d.len() < 2 {
        return Err(Error::invalid("a standard deviation needs at least two draws"));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::invalid("interval mass must lie in (0, 1)"));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s = d.clone();
    s.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - mass);
    Ok(PateSummary {
        mean,
        sd,
        lower: quantile(&s, tail),
        upper: quantile(&s, 1.0 - tail),
        mass,
    })
}

/// Effect draws for one pattern: fit on its pooled block, then one
/// bootstrap-weighted average of primary-row effects per posterior draw.
fn pattern_draws<R: Rng + ?Sized>(
    data: &Dataset,
    pooled_rows: &[usize],
    spec: &ModelSpec,
    cf: &Counterfactual,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let fit = fit_block(data, pooled_rows, spec, count, rng)?;
    (0..count)
        .map(|b| {
            let cate = cate_draw(fit.draw(b), cf)?;
            let w = bayesian_bootstrap_weights(cate.len(), rng)?;
            Ok(w.iter().zip(&cate).map(|(w, c)| w * c).sum())
        })
        .collect()
}

/// Mixture posterior of the primary-source PATE. Pattern `q` receives its
/// largest-remainder share of `b` draws and its own RNG stream.
pub fn pate_posterior<R: Rng + ?Sized>(
    data: &Dataset,
    spec: &ModelSpec,
    mem: &MemSpace,
    estimand: EstimandSpec,
    b: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<PatePosterior> {
    if b == 0 {
        return Err(Error::invalid("at least one posterior draw is required"));
    }
    let seed = rng.next_u64();
    let builder = spec.builder(data)?;
    let primary = data.rows_of(&[0]);
    let cf = Counterfactual::new(&builder, data, &primary, estimand)?;
    let allocation = allocate(&mem.weights, b);
    let per_pattern = exec.map_range(mem.patterns.len(), |q| {
        if allocation[q] == 0 {
            return Ok(Vec::new());
        }
        let blocks = pool(data, &mem.patterns[q])?;
        let rows = data.rows_of(&blocks.pooled);
        let mut r = substream(seed, &[q as u64]);
        pattern_draws(data, &rows, spec, &cf, allocation[q], &mut r).map_err(|e| Error::Block {
            module: "pate",
            pattern: format!("{}", q + 1),
            block: blocks.pooled.iter().map(|&s| data.sources()[s].as_str()).collect::<Vec<_>>().join("+"),
            source: Box::new(e),
        })
    });
    let mut draws = Vec::with_capacity(b);
    for d in per_pattern {
        draws.extend(d?);
    }
    Ok(PatePosterior { draws, allocation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blm::CoefficientDraw;
    use crate::data::{Formula, Row};
    use crate::seed::rng_from_seed;
    use nalgebra::DVector;

    fn data() -> Dataset {
        let rows = vec![
            Row { y: 1.0, treated: true, compliant: Some(false), source: 0, x: vec![4.0] },
            Row { y: 0.0, treated: false, compliant: Some(true), source: 0, x: vec![1.0] },
            Row { y: 2.0, treated: true, compliant: Some(true), source: 0, x: vec![-2.0] },
        ];
        Dataset::new(rows, vec!["P".into()], vec!["x".into()]).unwrap()
    }

    #[test]
    fn linear_contrasts() {
        let d = data();
        let f = Formula::parse("x, A:x", true).unwrap();
        let b = DesignBuilder::new(&d, &f).unwrap();
        let cf = Counterfactual::new(&b, &d, &[0, 1, 2], EstimandSpec::default()).unwrap();
        let draw = CoefficientDraw { beta: DVector::from_vec(vec![0.3, 2.0, 1.0, 0.5]), sigma2: 1.0 };
        let got = cate_draw(ModelDraw::Blm(&draw), &cf).unwrap();
        for (g, w) in got.iter().zip([4.0, 2.5, 1.0]) {
            assert!((g - w).abs() < 1e-14);
        }
        let flat = CoefficientDraw { beta: DVector::from_vec(vec![0.3, 2.0, 1.0, 0.0]), sigma2: 1.0 };
        let got = cate_draw(ModelDraw::Blm(&flat), &cf).unwrap();
        assert!(got.iter().all(|g| (g - 2.0).abs() < 1e-14));
    }

    #[test]
    fn fix_compliant_sets_both_arms() {
        let d = data();
        let f = Formula::parse("C, x", true).unwrap();
        let b = DesignBuilder::new(&d, &f).unwrap();
        let cf = Counterfactual::new(&b, &d, &[0, 1, 2], EstimandSpec { fix_compliant: true }).unwrap();
        let c = cf.treated.compliance_col.unwrap();
        for i in 0..3 {
            assert_eq!(cf.treated.values[(i, c)], 1.0);
            assert_eq!(cf.control.values[(i, c)], 1.0);
        }
        let observed = Counterfactual::new(&b, &d, &[0], EstimandSpec::default()).unwrap();
        assert_eq!(observed.treated.values[(0, c)], 0.0);
    }

    #[test]
    fn stump_forest_has_no_effect() {
        use crate::bart::{Tree, TreeEnsembleDraw};
        use crate::data::OutcomeTransform;
        let d = data();
        let b = DesignBuilder::new(&d, &Formula::parse("x", false).unwrap()).unwrap();
        let cf = Counterfactual::new(&b, &d, &[0, 1, 2], EstimandSpec::default()).unwrap();
        let forest = TreeEnsembleDraw { trees: vec![Tree::stump(0.4); 4], sigma2: 1.0, n_vars: 2 };
        let t = OutcomeTransform { shift: 3.0, scale: 7.0 };
        assert_eq!(cate_draw(ModelDraw::Bart(&forest, &t), &cf).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn bootstrap_weights_lie_on_simplex() {
        let mut rng = rng_from_seed(1);
        assert_eq!(bayesian_bootstrap_weights(1, &mut rng).unwrap(), vec![1.0]);
        for n in [2, 7, 100] {
            let w = bayesian_bootstrap_weights(n, &mut rng).unwrap();
            assert_eq!(w.len(), n);
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(&[1.0, 0.0, 0.0], 100), vec![100, 0, 0]);
        assert_eq!(allocate(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(allocate(&[0.6343, 0.3652, 0.0005, 0.0], 1000), vec![634, 365, 1, 0]);
    }

    #[test]
    fn summary_examples() {
        let p = |d: Vec<f64>| PatePosterior { allocation: vec![d.len()], draws: d };
        let s = summarize(&p(vec![1.0; 4]), 0.95).unwrap();
        assert_eq!((s.mean, s.sd), (1.0, 0.0));
        let s = summarize(&p(vec![0.0, 2.0]), 0.95).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!(summarize(&p(vec![1.0]), 0.95).is_err());
    }

    proptest::proptest! {
        #[test]
        fn allocation_is_exact_and_close(raw in proptest::collection::vec(0.0f64..1.0, 1..40), b in 1usize..5000) {
            let total: f64 = raw.iter().sum();
            proptest::prop_assume!(total > 0.0);
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let a = allocate(&w, b);
            proptest::prop_assert_eq!(a.iter().sum::<usize>(), b);
            for (q, &n) in a.iter().enumerate() {
                proptest::prop_assert!((n as f64 - w[q] * b as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
