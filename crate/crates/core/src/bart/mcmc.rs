use nalgebra::DMatrix;
use rand::{Rng, RngExt};
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::config::BartConfig;
use super::grid::CutGrid;
use super::tree::{Node, Tree};
use crate::data::{DesignMatrix, OutcomeTransform};
use crate::error::{Error, Result};

/// One posterior draw of the sum-of-trees model, on the standardised scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsembleDraw {
    pub trees: Vec<Tree>,
    pub sigma2: f64,
    pub n_vars: usize,
}

impl TreeEnsembleDraw {
    /// Sum of terminal values for each row of `x`.
    pub fn predict_standardized(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_vars {
            return Err(Error::ColumnMismatch { expected: self.n_vars, found: x.ncols() });
        }
        Ok((0..x.nrows())
            .map(|i| self.trees.iter().map(|t| t.predict(|v| x[(i, v)])).sum())
            .collect())
    }
}

/// Predictions in outcome units.
pub fn predict(draw: &TreeEnsembleDraw, rows: &DesignMatrix, transform: &OutcomeTransform) -> Result<Vec<f64>> {
    Ok(draw
        .predict_standardized(&rows.values)?
        .into_iter()
        .map(|v| transform.invert(v))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Grow,
    Prune,
    Change,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: [usize; 3],
    pub accepted: [usize; 3],
}

struct LeafStats {
    n: usize,
    sum: f64,
}

/// Backfitting Metropolis-within-Gibbs sampler for a fixed training set.
pub struct BartSampler<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    cfg: BartConfig,
    grid: CutGrid,
    trees: Vec<Tree>,
    /// Per tree, the leaf holding each training row.
    leaf_of: Vec<Vec<usize>>,
    fit: Vec<f64>,
    sigma2: f64,
    stats: MoveStats,
}

impl<'a> BartSampler<'a> {
    /// Starts from `m` stumps at `ȳ / m` with `σ² = sigma2_init`.
    pub fn new(x: &'a DMatrix<f64>, y: &'a [f64], cfg: BartConfig, sigma2_init: f64) -> Result<Self> {
        cfg.validate()?;
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::invalid(format!("design has {} rows but {n} outcomes", x.nrows())));
        }
        if n < 2 {
            return Err(Error::invalid("the tree ensemble needs at least two rows"));
        }
        if y.iter().any(|v| !v.is_finite()) || !(sigma2_init > 0.0 && sigma2_init.is_finite()) {
            return Err(Error::invalid("non-finite outcome or initial variance"));
        }
        let grid = CutGrid::new(x, cfg.grid_size)?;
        let start = y.iter().sum::<f64>() / n as f64 / cfg.m as f64;
        let trees = vec![Tree::stump(start); cfg.m];
        let leaf_of = vec![vec![Tree::ROOT; n]; cfg.m];
        let fit = vec![start * cfg.m as f64; n];
        Ok(BartSampler {
            x,
            y,
            cfg,
            grid,
            trees,
            leaf_of,
            fit,
            sigma2: sigma2_init,
            stats: MoveStats::default(),
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn stats(&self) -> MoveStats {
        self.stats
    }

    pub fn grid(&self) -> &CutGrid {
        &self.grid
    }

    pub fn draw(&self) -> TreeEnsembleDraw {
        TreeEnsembleDraw {
            trees: self.trees.clone(),
            sigma2: self.sigma2,
            n_vars: self.x.ncols(),
        }
    }

    /// Partial residuals with tree `j` removed.
    fn residual(&self, j: usize) -> Vec<f64> {
        let t = &self.trees[j];
        (0..self.y.len())
            .map(|i| self.y[i] - self.fit[i] + t.value(self.leaf_of[j][i]))
            .collect()
    }

    fn rows_in(&self, j: usize, nodes: &[usize]) -> Vec<usize> {
        self.leaf_of[j]
            .iter()
            .enumerate()
            .filter(|(_, l)| nodes.contains(l))
            .map(|(i, _)| i)
            .collect()
    }

    fn split_prob(&self, depth: usize, rows: &[usize]) -> f64 {
        if self.cfg.alpha == 0.0 || !self.grid.can_split(self.x, rows) {
            return 0.0;
        }
        self.cfg.alpha * (1.0 + depth as f64).powf(-self.cfg.beta_depth)
    }

    /// Log of the terminal-value-integrated likelihood factor of a leaf.
    fn leaf_lik(&self, s: &LeafStats) -> f64 {
        let v0 = self.cfg.node_prior.variance(self.sigma2);
        let s2 = self.sigma2;
        let n = s.n as f64;
        -0.5 * (n * v0 / s2).ln_1p() + v0 * s.sum * s.sum / (2.0 * s2 * (s2 + n * v0))
    }

    fn stats_of(&self, rows: &[usize], resid: &[f64]) -> LeafStats {
        LeafStats {
            n: rows.len(),
            sum: rows.iter().map(|&i| resid[i]).sum(),
        }
    }

    fn partition(&self, rows: &[usize], var: usize, cut: f64) -> (Vec<usize>, Vec<usize>) {
        rows.iter().partition(|&&i| self.x[(i, var)] <= cut)
    }

    fn move_probs(&self) -> (f64, f64) {
        if self.cfg.change_moves {
            (0.4, 0.4)
        } else {
            (0.5, 0.5)
        }
    }

    fn grow_ratio_with(&self, j: usize, leaf: usize, var: usize, cut: f64, resid: &[f64]) -> f64 {
        let t = &self.trees[j];
        let rows = self.rows_in(j, &[leaf]);
        let (lrows, rrows) = self.partition(&rows, var, cut);
        let d = t.depth(leaf);
        let b = t.n_leaves() as f64;
        let (pg, pp) = self.move_probs();
        let p_grow = if t.n_leaves() == 1 { 1.0 } else { pg };
        let parent_was_nog = t.parent(leaf).is_some_and(|p| t.is_nog(p));
        let nog_after = (t.nog().len() + 1 - usize::from(parent_was_nog)) as f64;
        let ps = self.split_prob(d, &rows);
        let ps_l = self.split_prob(d + 1, &lrows);
        let ps_r = self.split_prob(d + 1, &rrows);
        (pp / nog_after).ln() - (p_grow / b).ln() + ps.ln() + (1.0 - ps_l).ln() + (1.0 - ps_r).ln()
            - (1.0 - ps).ln()
            + self.leaf_lik(&self.stats_of(&lrows, resid))
            + self.leaf_lik(&self.stats_of(&rrows, resid))
            - self.leaf_lik(&self.stats_of(&rows, resid))
    }

    fn prune_ratio_with(&self, j: usize, node: usize, resid: &[f64]) -> f64 {
        let t = &self.trees[j];
        let (l, r) = t.children(node).expect("prune target is interior");
        let lrows = self.rows_in(j, &[l]);
        let rrows = self.rows_in(j, &[r]);
        let rows = self.rows_in(j, &[l, r]);
        let d = t.depth(node);
        let b_after = t.n_leaves() - 1;
        let (pg, pp) = self.move_probs();
        let p_grow_after = if b_after == 1 { 1.0 } else { pg };
        let nog = t.nog().len() as f64;
        let ps = self.split_prob(d, &rows);
        let ps_l = self.split_prob(d + 1, &lrows);
        let ps_r = self.split_prob(d + 1, &rrows);
        (p_grow_after / b_after as f64).ln() - (pp / nog).ln() - ps.ln() - (1.0 - ps_l).ln() - (1.0 - ps_r).ln()
            + (1.0 - ps).ln()
            - self.leaf_lik(&self.stats_of(&lrows, resid))
            - self.leaf_lik(&self.stats_of(&rrows, resid))
            + self.leaf_lik(&self.stats_of(&rows, resid))
    }

    /// Metropolis-Hastings log acceptance ratio for splitting `leaf` of tree
    /// `j` on `x[var] ≤ cut`, at the current state.
    pub fn grow_log_ratio(&self, j: usize, leaf: usize, var: usize, cut: f64) -> f64 {
        self.grow_ratio_with(j, leaf, var, cut, &self.residual(j))
    }

    /// Log acceptance ratio for collapsing `node` (both children leaves).
    pub fn prune_log_ratio(&self, j: usize, node: usize) -> f64 {
        self.prune_ratio_with(j, node, &self.residual(j))
    }

    fn do_grow(&mut self, j: usize, leaf: usize, var: usize, cut: f64) {
        let (l, r) = self.trees[j].split(leaf, var, cut, 0.0, 0.0);
        for i in 0..self.y.len() {
            if self.leaf_of[j][i] == leaf {
                self.leaf_of[j][i] = if self.x[(i, var)] <= cut { l } else { r };
            }
        }
    }

    fn do_prune(&mut self, j: usize, node: usize) {
        let (l, r) = self.trees[j].children(node).expect("interior");
        self.trees[j].collapse(node, 0.0);
        for slot in self.leaf_of[j].iter_mut() {
            if *slot == l || *slot == r {
                *slot = node;
            }
        }
    }

    fn do_change(&mut self, j: usize, node: usize, var: usize, cut: f64) {
        let (l, r) = self.trees[j].children(node).expect("interior");
        self.trees[j].set_rule(node, var, cut);
        for i in 0..self.y.len() {
            let s = self.leaf_of[j][i];
            if s == l || s == r {
                self.leaf_of[j][i] = if self.x[(i, var)] <= cut { l } else { r };
            }
        }
    }

    /// Applies a grow without an accept/reject step; terminal values of the new
    /// leaves are zero until the next sweep. Fit bookkeeping is untouched.
    pub fn apply_grow(&mut self, j: usize, leaf: usize, var: usize, cut: f64) {
        let v = self.trees[j].value(leaf);
        self.do_grow(j, leaf, var, cut);
        let (l, r) = self.trees[j].children(leaf).expect("just split");
        self.trees[j].set_value(l, v);
        self.trees[j].set_value(r, v);
    }

    fn pick_rule<R: Rng + ?Sized>(&self, rows: &[usize], rng: &mut R) -> Option<(usize, f64)> {
        let opts = self.grid.split_options(self.x, rows);
        if opts.is_empty() {
            return None;
        }
        let (var, range) = opts[rng.random_range(0..opts.len())].clone();
        let k = rng.random_range(range);
        Some((var, self.grid.cuts(var)[k]))
    }

    fn propose<R: Rng + ?Sized>(&mut self, j: usize, resid: &[f64], rng: &mut R) {
        let stump = self.trees[j].n_leaves() == 1;
        let u: f64 = rng.random();
        let (pg, pp) = self.move_probs();
        let mv = if stump || u < pg {
            Move::Grow
        } else if u < pg + pp {
            Move::Prune
        } else {
            Move::Change
        };
        let k = mv as usize;
        self.stats.proposed[k] += 1;
        let accepted = match mv {
            Move::Grow => {
                let leaves = self.trees[j].leaves();
                let leaf = leaves[rng.random_range(0..leaves.len())];
                let rows = self.rows_in(j, &[leaf]);
                match self.pick_rule(&rows, rng) {
                    None => false,
                    Some((var, cut)) => {
                        let ratio = self.grow_ratio_with(j, leaf, var, cut, resid);
                        let ok = accept(ratio, rng);
                        if ok {
                            self.do_grow(j, leaf, var, cut);
                        }
                        ok
                    }
                }
            }
            Move::Prune => {
                let nog = self.trees[j].nog();
                let node = nog[rng.random_range(0..nog.len())];
                let ratio = self.prune_ratio_with(j, node, resid);
                let ok = accept(ratio, rng);
                if ok {
                    self.do_prune(j, node);
                }
                ok
            }
            Move::Change => {
                let nog = self.trees[j].nog();
                let node = nog[rng.random_range(0..nog.len())];
                let (l, r) = self.trees[j].children(node).expect("interior");
                let rows = self.rows_in(j, &[l, r]);
                let (var, cut) = self.pick_rule(&rows, rng).expect("a split node has an admissible rule");
                let ratio = self.change_ratio(j, node, var, cut, &rows, resid);
                let ok = accept(ratio, rng);
                if ok {
                    self.do_change(j, node, var, cut);
                }
                ok
            }
        };
        if accepted {
            self.stats.accepted[k] += 1;
        }
    }

    fn change_ratio(&self, j: usize, node: usize, var: usize, cut: f64, rows: &[usize], resid: &[f64]) -> f64 {
        let t = &self.trees[j];
        let (l, r) = t.children(node).expect("interior");
        let d = t.depth(node) + 1;
        let old_l = self.rows_in(j, &[l]);
        let old_r = self.rows_in(j, &[r]);
        let (new_l, new_r) = self.partition(rows, var, cut);
        let side = |rows: &[usize]| self.leaf_lik(&self.stats_of(rows, resid)) + (1.0 - self.split_prob(d, rows)).ln();
        side(&new_l) + side(&new_r) - side(&old_l) - side(&old_r)
    }

    fn draw_leaves<R: Rng + ?Sized>(&mut self, j: usize, resid: &[f64], rng: &mut R) {
        let cap = self.trees[j].capacity();
        let mut n = vec![0usize; cap];
        let mut s = vec![0.0; cap];
        for (i, &l) in self.leaf_of[j].iter().enumerate() {
            n[l] += 1;
            s[l] += resid[i];
        }
        let v0 = self.cfg.node_prior.variance(self.sigma2);
        for leaf in self.trees[j].leaves() {
            let prec = 1.0 / v0 + n[leaf] as f64 / self.sigma2;
            let mean = s[leaf] / self.sigma2 / prec;
            let z: f64 = StandardNormal.sample(rng);
            self.trees[j].set_value(leaf, mean + z / prec.sqrt());
        }
    }

    fn draw_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.y.len() as f64;
        let ssr: f64 = self.y.iter().zip(&self.fit).map(|(y, f)| (y - f).powi(2)).sum();
        let mut shape = 0.5 * (self.cfg.nu + n);
        let mut rate = 0.5 * (self.cfg.nu * self.cfg.lambda + ssr);
        if let Some(gamma) = self.cfg.gamma() {
            let (k, sq) = self.trees.iter().flat_map(|t| t.leaves().into_iter().map(move |l| t.value(l))).fold(
                (0usize, 0.0),
                |(k, sq), v| (k + 1, sq + v * v),
            );
            shape += 0.5 * k as f64;
            rate += 0.5 * gamma * sq;
        }
        let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
        self.sigma2 = 1.0 / g.sample(rng);
    }

    /// One full backfitting pass over all trees followed by the `σ²` update.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for j in 0..self.trees.len() {
            let resid = self.residual(j);
            self.propose(j, &resid, rng);
            self.draw_leaves(j, &resid, rng);
            let t = &self.trees[j];
            for (i, f) in self.fit.iter_mut().enumerate() {
                *f = self.y[i] - resid[i] + t.value(self.leaf_of[j][i]);
            }
        }
        self.draw_sigma2(rng);
        #[cfg(debug_assertions)]
        if let Err(e) = self.check_partition() {
            panic!("{e}");
        }
    }

    /// Every training row reaches exactly the leaf recorded for it, every
    /// leaf holds at least one row, and the running fit equals the sum of
    /// terminal values.
    pub fn check_partition(&self) -> Result<()> {
        for (j, t) in self.trees.iter().enumerate() {
            let mut occupied = vec![0usize; t.capacity()];
            for i in 0..self.y.len() {
                let l = t.leaf_of(|v| self.x[(i, v)]);
                if l != self.leaf_of[j][i] || !matches!(t.node(l), Node::Leaf { .. }) {
                    return Err(Error::Numerical(format!("tree {j}: row {i} is in leaf {l}, recorded {}", self.leaf_of[j][i])));
                }
                occupied[l] += 1;
            }
            if let Some(l) = t.leaves().into_iter().find(|&l| occupied[l] == 0) {
                return Err(Error::Numerical(format!("tree {j}: leaf {l} holds no rows")));
            }
        }
        for i in 0..self.y.len() {
            let total: f64 = self.trees.iter().zip(&self.leaf_of).map(|(t, lo)| t.value(lo[i])).sum();
            if (total - self.fit[i]).abs() > 1e-8 * (1.0 + total.abs()) {
                return Err(Error::Numerical(format!("row {i}: running fit drifted from tree sum")));
            }
        }
        Ok(())
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Runs `n_burn + n_keep` sweeps and returns the kept draws. `y` must already
/// be standardised.
pub fn fit_mcmc<R: Rng + ?Sized>(
    design: &DesignMatrix,
    y: &[f64],
    cfg: &BartConfig,
    rng: &mut R,
) -> Result<Vec<TreeEnsembleDraw>> {
    let s2 = super::config::sigma_hat2(&design.values, y)?;
    let mut sampler = BartSampler::new(&design.values, y, cfg.clone(), s2)?;
    for _ in 0..cfg.n_burn {
        sampler.sweep(rng);
    }
    let mut draws = Vec::with_capacity(cfg.n_keep);
    for _ in 0..cfg.n_keep {
        sampler.sweep(rng);
        draws.push(sampler.draw());
    }
    log::debug!("bart moves {:?}", sampler.stats());
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bart::config::{default_bart_config, NodePrior};
    use crate::seed::rng_from_seed;

    fn design(x: DMatrix<f64>) -> DesignMatrix {
        let p = x.ncols();
        DesignMatrix {
            values: x,
            column_roles: (0..p).map(crate::data::ColumnRole::Covariate).collect(),
            names: (0..p).map(|j| format!("x{j}")).collect(),
            treatment_col: 0,
            compliance_col: None,
        }
    }

    fn linear_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n)
            .map(|i| x[(i, 0)] + 0.1 * { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect();
        let (z, _) = crate::data::standardize_outcome(&y).unwrap();
        (x, z)
    }

    #[test]
    fn prediction_examples() {
        let zero = TreeEnsembleDraw { trees: vec![Tree::stump(0.0); 3], sigma2: 1.0, n_vars: 1 };
        let t = OutcomeTransform { shift: 4.0, scale: 2.0 };
        let d = design(DMatrix::from_element(2, 1, 1.0));
        assert_eq!(predict(&zero, &d, &t).unwrap(), vec![4.0, 4.0]);
        let pair = TreeEnsembleDraw { trees: vec![Tree::stump(0.3), Tree::stump(-0.1)], sigma2: 1.0, n_vars: 1 };
        let p = pair.predict_standardized(&d.values).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
        let wide = design(DMatrix::from_element(2, 2, 1.0));
        assert!(matches!(predict(&zero, &wide, &t), Err(Error::ColumnMismatch { .. })));
    }

    #[test]
    fn same_seed_same_draws() {
        let (x, y) = linear_data(40, 1);
        let d = design(x);
        let mut cfg = default_bart_config(&d.values, &y).unwrap();
        cfg.m = 20;
        cfg.n_burn = 10;
        cfg.n_keep = 5;
        let a = fit_mcmc(&d, &y, &cfg, &mut rng_from_seed(3)).unwrap();
        let b = fit_mcmc(&d, &y, &cfg, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_signal_is_recovered() {
        let (x, y) = linear_data(200, 2);
        let d = design(x.clone());
        let cfg = default_bart_config(&d.values, &y).unwrap();
        let draws = fit_mcmc(&d, &y, &cfg, &mut rng_from_seed(4)).unwrap();
        let mut mean = vec![0.0; y.len()];
        for dr in &draws {
            for (m, p) in mean.iter_mut().zip(dr.predict_standardized(&x).unwrap()) {
                *m += p / draws.len() as f64;
            }
        }
        let rmse = (mean.iter().zip(&y).map(|(m, y)| (m - y).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!(rmse < 0.2, "rmse {rmse}");
    }

    #[test]
    fn grow_and_prune_ratios_are_inverse() {
        let (x, y) = linear_data(60, 5);
        let mut cfg = default_bart_config(&x, &y).unwrap();
        cfg.m = 5;
        for change in [false, true] {
            cfg.change_moves = change;
            let mut s = BartSampler::new(&x, &y, cfg.clone(), 0.05).unwrap();
            let mut rng = rng_from_seed(6);
            for _ in 0..20 {
                s.sweep(&mut rng);
            }
            for j in 0..cfg.m {
                let leaf = s.trees()[j].leaves()[0];
                let rows = s.rows_in(j, &[leaf]);
                let Some((var, cut)) = s.pick_rule(&rows, &mut rng) else { continue };
                let g = s.grow_log_ratio(j, leaf, var, cut);
                s.apply_grow(j, leaf, var, cut);
                let p = s.prune_log_ratio(j, leaf);
                assert!((g + p).abs() < 1e-9, "tree {j}: grow {g}, prune {p}");
            }
        }
    }

    #[test]
    fn default_prior_fits_too() {
        let (x, y) = linear_data(50, 7);
        let d = design(x);
        let mut cfg = default_bart_config(&d.values, &y).unwrap();
        cfg.node_prior = NodePrior::Default { tau: crate::bart::config::default_tau(cfg.m, 2.0) };
        cfg.n_burn = 20;
        cfg.n_keep = 5;
        cfg.change_moves = true;
        let draws = fit_mcmc(&d, &y, &cfg, &mut rng_from_seed(8)).unwrap();
        assert!(draws.iter().all(|d| d.sigma2 > 0.0 && d.trees.len() == cfg.m));
    }
}
