use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use statrs::function::gamma::ln_gamma;

use super::config::{BartConfig, NodePrior};
use super::grid::CutGrid;
use super::tree::Tree;
use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{cholesky_jittered, ln_det, log_mean_exp};
use crate::seed::substream;

/// Grows one tree from the prior on the training rows and records each row's
/// leaf in `labels`.
fn prior_tree<R: Rng + ?Sized>(
    cfg: &BartConfig,
    x: &DMatrix<f64>,
    grid: &CutGrid,
    rng: &mut R,
    labels: &mut [usize],
) -> Tree {
    let mut tree = Tree::stump(0.0);
    let mut stack = vec![(Tree::ROOT, (0..x.nrows()).collect::<Vec<usize>>())];
    while let Some((node, rows)) = stack.pop() {
        let opts = grid.split_options(x, &rows);
        let ps = cfg.alpha * (1.0 + tree.depth(node) as f64).powf(-cfg.beta_depth);
        if opts.is_empty() || rng.random::<f64>() >= ps {
            for &i in &rows {
                labels[i] = node;
            }
            continue;
        }
        let (var, range) = opts[rng.random_range(0..opts.len())].clone();
        let cut = grid.cuts(var)[rng.random_range(range)];
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, var)] <= cut);
        let (ln, rn) = tree.split(node, var, cut, 0.0, 0.0);
        stack.push((rn, r));
        stack.push((ln, l));
    }
    tree
}

fn prior_forest<R: Rng + ?Sized>(
    cfg: &BartConfig,
    x: &DMatrix<f64>,
    grid: &CutGrid,
    rng: &mut R,
) -> (Vec<Tree>, Vec<Vec<usize>>) {
    (0..cfg.m)
        .map(|_| {
            let mut labels = vec![0; x.nrows()];
            let t = prior_tree(cfg, x, grid, rng, &mut labels);
            (t, labels)
        })
        .unzip()
}

/// `m` tree structures drawn from the tree prior. A node at depth `d` splits
/// with probability `α (1 + d)^(-β_depth)` when it has an admissible rule;
/// the predictor and then the cutpoint are chosen uniformly among admissible
/// ones.
pub fn sample_prior_trees<R: Rng + ?Sized>(cfg: &BartConfig, design: &DesignMatrix, rng: &mut R) -> Result<Vec<Tree>> {
    cfg.validate()?;
    let grid = CutGrid::new(&design.values, cfg.grid_size)?;
    Ok(prior_forest(cfg, &design.values, &grid, rng).0)
}

/// `R[k, l]`: fraction of trees in which rows `k` and `l` share a leaf.
pub fn shared_node_correlation(trees: &[Tree], rows: &DesignMatrix) -> DMatrix<f64> {
    let x = &rows.values;
    let n = x.nrows();
    let labels: Vec<Vec<usize>> = trees
        .iter()
        .map(|t| (0..n).map(|i| t.leaf_of(|v| x[(i, v)])).collect())
        .collect();
    let mut r = co_residence(&labels, n, 1.0 / trees.len() as f64);
    r.fill_diagonal(1.0);
    r
}

/// `Σ_trees w · 1[same leaf]` over all row pairs.
fn co_residence(labels: &[Vec<usize>], n: usize, w: f64) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n, n);
    let mut order: Vec<usize> = (0..n).collect();
    for lab in labels {
        order.sort_unstable_by_key(|&i| (lab[i], i));
        let mut start = 0;
        while start < n {
            let leaf = lab[order[start]];
            let end = start + order[start..].iter().take_while(|&&i| lab[i] == leaf).count();
            let group = &order[start..end];
            for &l in group {
                let mut col = c.column_mut(l);
                for &k in group {
                    col[k] += w;
                }
            }
            start = end;
        }
    }
    c
}

/// Log density `ln t_ν(y | 0, λU)` with `U = I + Σ_trees 1[same leaf] / γ`.
///
/// Rows that share a leaf in every tree form a cell. With `E` the normalised
/// cell indicators, `U = I + E M Eᵀ` where `M = N^½ C N^½ / γ`, `C` counts
/// the trees in which two cells share a leaf and `N` holds the cell sizes.
/// Hence `|U| = |I + M|` and `yᵀU⁻¹y` is the within-cell sum of squares plus
/// `ỹᵀ(I + M)⁻¹ỹ` with `ỹ = Eᵀy`. Only a `g × g` system is factorised, and
/// the large rank-one part of a stump forest is handled exactly.
fn forest_log_density(labels: &[Vec<usize>], y: &DVector<f64>, cfg: &BartConfig, gamma: f64) -> Result<f64> {
    let n = y.len();
    let mut rows: Vec<usize> = (0..n).collect();
    rows.sort_by(|&a, &b| labels.iter().map(|l| l[a]).cmp(labels.iter().map(|l| l[b])).then(a.cmp(&b)));
    let same = |a: usize, b: usize| labels.iter().all(|l| l[a] == l[b]);
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for &i in &rows {
        match cells.last_mut() {
            Some(c) if same(c[0], i) => c.push(i),
            _ => cells.push(vec![i]),
        }
    }
    let g = cells.len();
    let reps: Vec<Vec<usize>> = labels.iter().map(|l| cells.iter().map(|c| l[c[0]]).collect()).collect();
    let size: Vec<f64> = cells.iter().map(|c| (c.len() as f64).sqrt()).collect();
    let mut m = co_residence(&reps, g, 1.0 / gamma);
    for a in 0..g {
        for b in 0..g {
            m[(a, b)] *= size[a] * size[b];
        }
        m[(a, a)] += 1.0;
    }
    let mut within = 0.0;
    let mut ty = DVector::zeros(g);
    for (a, c) in cells.iter().enumerate() {
        let mean = c.iter().map(|&i| y[i]).sum::<f64>() / c.len() as f64;
        within += c.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>();
        ty[a] = mean * size[a];
    }
    let chol = cholesky_jittered(m.clone(), "bart: marginal-likelihood shape matrix λU")?;
    let mut sol = chol.solve(&ty);
    let resid = &ty - &m * &sol;
    sol += chol.solve(&resid);
    let quad = (within + ty.dot(&sol)) / cfg.lambda;
    let ln_det = n as f64 * cfg.lambda.ln() + ln_det(&chol);
    let (nu, nf) = (cfg.nu, n as f64);
    Ok(ln_gamma(0.5 * (nu + nf)) - ln_gamma(0.5 * nu) - 0.5 * nf * (nu * std::f64::consts::PI).ln()
        - 0.5 * ln_det
        - 0.5 * (nu + nf) * (quad / nu).ln_1p())
}

/// Per-draw log densities `ln t_ν(y | 0, λU)` for `n_draws` forests from the
/// tree prior. Draw `i` uses its own substream, so the result does not depend
/// on `exec`.
pub fn prior_mc_log_densities<R: Rng + ?Sized>(
    design: &DesignMatrix,
    y: &[f64],
    cfg: &BartConfig,
    n_draws: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let gamma = match cfg.node_prior {
        NodePrior::Modified { gamma } => gamma,
        NodePrior::Default { .. } => {
            return Err(Error::invalid(
                "the marginal likelihood is only available under the modified node prior",
            ))
        }
    };
    if n_draws == 0 {
        return Err(Error::invalid("at least one prior draw is required"));
    }
    if design.nrows() != y.len() {
        return Err(Error::invalid("design and outcome lengths differ"));
    }
    let x = &design.values;
    let grid = CutGrid::new(x, cfg.grid_size)?;
    let yv = DVector::from_column_slice(y);
    let base = rng.next_u64();
    exec.map_range(n_draws, |i| {
        let mut r = substream(base, &[i as u64]);
        let (_, labels) = prior_forest(cfg, x, &grid, &mut r);
        forest_log_density(&labels, &yv, cfg, gamma)
    })
    .into_iter()
    .collect()
}

/// Prior Monte Carlo estimate of `ln p(y)` under the modified node prior:
/// the log of the average of [`prior_mc_log_densities`].
pub fn marginal_log_likelihood_prior_mc<R: Rng + ?Sized>(
    design: &DesignMatrix,
    y: &[f64],
    cfg: &BartConfig,
    n_draws: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<f64> {
    Ok(log_mean_exp(&prior_mc_log_densities(design, y, cfg, n_draws, rng, exec)?))
}
