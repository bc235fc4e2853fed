//! Group MICA: estimation with a known partition, pairwise dependence
//! statistics, ratio-based edge count, graph grouping, and the iterative
//! grouping-and-refinement algorithm.

use log::warn;
use nalgebra::DMatrix;
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;

use crate::error::{MicaError, Result};
use crate::groups::GroupStructure;
use crate::mdd::{dvar_scalar_unchecked, mdc_sq_scalar_parts, EPS_DEN};
use crate::mica::{estimate_mica, EstimationResult, MicaConfig};
use crate::numeric::mean;
use crate::objective::CrossObjective;
use crate::optim::block_cayley_descent;
use crate::ortho::{align_columns, OrthoMatrix};
use crate::series::SeriesMatrix;

/// Recommended fraction of pairs searched by [`estimate_r`].
pub const DEFAULT_C0: f64 = 0.75;
pub const DEFAULT_EPS_FROB: f64 = 1e-4;
pub const DEFAULT_MAX_OUTER: usize = 10;
/// Statistics below this are treated as no dependence at all.
const ZERO_STAT: f64 = 1e-10;
/// Above this many candidate partitions the initial column routing switches
/// from exhaustive search to greedy placement with swap improvement.
const EXHAUSTIVE_LIMIT: u64 = 200_000;

/// Symmetric matrix of pairwise dependence statistics
/// `M(i, j) = max_h max(MDC^2(x_i,t | x_j,t-h), MDC^2(x_j,t | x_i,t-h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStatMatrix {
    m_hat: DMatrix<f64>,
}

impl PairStatMatrix {
    /// Validates squareness, exact symmetry and non-negativity; the
    /// diagonal is ignored.
    pub fn new(m_hat: DMatrix<f64>) -> Result<Self> {
        if !m_hat.is_square() {
            return Err(MicaError::DimensionMismatch("pair statistics must be square".into()));
        }
        let p = m_hat.nrows();
        for i in 0..p {
            for j in 0..p {
                if i == j {
                    continue;
                }
                let v = m_hat[(i, j)];
                if !v.is_finite() || v < 0.0 || v != m_hat[(j, i)] {
                    return Err(MicaError::Config(format!(
                        "pair statistic ({i}, {j}) = {v} is not a symmetric non-negative value"
                    )));
                }
            }
        }
        Ok(Self { m_hat })
    }

    pub fn p(&self) -> usize {
        self.m_hat.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m_hat[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m_hat
    }

    /// Off-diagonal pairs `(i, j, value)` with `i < j`, in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let p = self.p();
        let mut out = Vec::with_capacity(p * p.saturating_sub(1) / 2);
        for i in 0..p {
            for j in (i + 1)..p {
                out.push((i, j, self.m_hat[(i, j)]));
            }
        }
        out
    }
}

/// Pairwise statistics of the estimated components over lags `0..=h0`.
/// Degenerate denominators (a constant lagged column) count as zero.
pub fn pair_stats(x_hat: &SeriesMatrix, h0: usize) -> Result<PairStatMatrix> {
    let n = x_hat.nrows();
    let p = x_hat.ncols();
    if n <= h0 + 2 {
        return Err(MicaError::SampleTooSmall(format!("need n > h0 + 2, got n = {n} and h0 = {h0}")));
    }
    // Denominator factors per column and lag: responses use rows h..n,
    // conditioners rows 0..n-h.
    let mut resp = vec![vec![0.0; h0 + 1]; p];
    let mut cond = vec![vec![0.0; h0 + 1]; p];
    for k in 0..p {
        let col = x_hat.column(k);
        for h in 0..=h0 {
            let tail = &col[h..];
            let mu = mean(tail);
            resp[k][h] = tail.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / tail.len() as f64;
            cond[k][h] = dvar_scalar_unchecked(&col[..n - h]).max(0.0).sqrt();
        }
    }
    let stat = |i: usize, j: usize, h: usize| -> f64 {
        let v = &x_hat.column(i)[h..];
        let u = &x_hat.column(j)[..n - h];
        match mdc_sq_scalar_parts(v, u, resp[i][h], cond[j][h], EPS_DEN) {
            Ok(s) => s.max(0.0),
            Err(e) => {
                warn!("pair ({i}, {j}) at lag {h}: {e}; recorded as 0");
                0.0
            }
        }
    };
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            (0..=h0)
                .map(|h| stat(i, j, h).max(stat(j, i, h)))
                .fold(0.0, f64::max)
        })
        .collect();
    let mut m = DMatrix::zeros(p, p);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    PairStatMatrix::new(m)
}

/// Ratio estimate of the number of dependent pairs: with the off-diagonal
/// statistics sorted in descending order, the `j <= floor(c0 * p0)` that
/// maximises `M_j / M_{j+1}` (smallest `j` on ties, a zero denominator
/// counting as infinite). Returns 0 when every statistic is negligible or
/// there are fewer than two pairs.
pub fn estimate_r(stats: &PairStatMatrix, c0: f64) -> Result<usize> {
    if !(c0 > 0.0 && c0 <= 1.0) {
        return Err(MicaError::Config(format!("c0 must lie in (0, 1], got {c0}")));
    }
    let mut values: Vec<f64> = stats.pairs().into_iter().map(|(_, _, v)| v).collect();
    let p0 = values.len();
    if p0 < 2 || values.iter().all(|&v| v < ZERO_STAT) {
        return Ok(0);
    }
    values.sort_by(|a, b| b.total_cmp(a));
    let limit = ((c0 * p0 as f64).floor() as usize).min(p0 - 1);
    let mut best = 0;
    let mut best_ratio = f64::NEG_INFINITY;
    for j in 1..=limit {
        let num = values[j - 1];
        let den = values[j];
        let ratio = if den == 0.0 { f64::INFINITY } else { num / den };
        if ratio > best_ratio {
            best_ratio = ratio;
            best = j;
        }
    }
    Ok(best)
}

/// Groups are the connected components of the graph whose edges are the
/// `r_hat` largest statistics (ties broken by lexicographic pair order).
pub fn group_from_graph(stats: &PairStatMatrix, r_hat: usize) -> Result<GroupStructure> {
    let p = stats.p();
    let mut pairs = stats.pairs();
    if r_hat > pairs.len() {
        return Err(MicaError::Config(format!(
            "r_hat = {r_hat} exceeds the {} available pairs",
            pairs.len()
        )));
    }
    // stable sort keeps lexicographic order among equal values
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut uf = UnionFind::<usize>::new(p);
    for &(i, j, _) in &pairs[..r_hat] {
        uf.union(i, j);
    }
    let labels = uf.into_labeling();
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; p];
    for (k, &root) in labels.iter().enumerate() {
        if slot[root] == usize::MAX {
            slot[root] = components.len();
            components.push(Vec::new());
        }
        components[slot[root]].push(k);
    }
    GroupStructure::from_components(p, components)
}

/// Within-group statistic mass of a column-to-group routing.
fn routing_score(stats: &PairStatMatrix, blocks: &[Vec<usize>]) -> f64 {
    blocks
        .iter()
        .map(|b| {
            let mut s = 0.0;
            for (x, &i) in b.iter().enumerate() {
                for &j in &b[x + 1..] {
                    s += stats.get(i, j);
                }
            }
            s
        })
        .sum()
}

fn multinomial(sizes: &[usize]) -> u64 {
    let mut count: u64 = 1;
    let mut remaining: u64 = sizes.iter().sum::<usize>() as u64;
    for &s in sizes {
        // C(remaining, s), computed incrementally to stay exact
        let mut c: u64 = 1;
        for k in 0..s as u64 {
            c = c.saturating_mul(remaining - k) / (k + 1);
        }
        count = count.saturating_mul(c);
        remaining -= s as u64;
    }
    count
}

/// Assign estimated components to the groups of `sizes` so that the summed
/// within-group statistics are maximal. Exhaustive when the number of
/// routings is small, otherwise greedy with pairwise swap improvement.
/// Returns, per group, the component indices in increasing order.
pub(crate) fn route_columns(stats: &PairStatMatrix, sizes: &[usize]) -> Vec<Vec<usize>> {
    let p = stats.p();
    if multinomial(sizes) <= EXHAUSTIVE_LIMIT {
        let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
        let mut current: Vec<Vec<usize>> = Vec::new();
        let mut used = vec![false; p];
        exhaustive(stats, sizes, &mut current, &mut used, &mut best);
        return best.expect("at least one routing").1;
    }
    greedy_routing(stats, sizes)
}

fn exhaustive(
    stats: &PairStatMatrix,
    sizes: &[usize],
    current: &mut Vec<Vec<usize>>,
    used: &mut [bool],
    best: &mut Option<(f64, Vec<Vec<usize>>)>,
) {
    let g = current.len();
    if g == sizes.len() {
        let score = routing_score(stats, current);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            *best = Some((score, current.clone()));
        }
        return;
    }
    let free: Vec<usize> = (0..used.len()).filter(|&k| !used[k]).collect();
    let mut chosen = Vec::with_capacity(sizes[g]);
    combos(&free, sizes[g], 0, &mut chosen, &mut |combo| {
        for &k in combo {
            used[k] = true;
        }
        current.push(combo.to_vec());
        exhaustive(stats, sizes, current, used, best);
        current.pop();
        for &k in combo {
            used[k] = false;
        }
    });
}

fn combos(items: &[usize], k: usize, from: usize, chosen: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if chosen.len() == k {
        f(chosen);
        return;
    }
    for idx in from..items.len() {
        if items.len() - idx < k - chosen.len() {
            break;
        }
        chosen.push(items[idx]);
        combos(items, k, idx + 1, chosen, f);
        chosen.pop();
    }
}

fn greedy_routing(stats: &PairStatMatrix, sizes: &[usize]) -> Vec<Vec<usize>> {
    let p = stats.p();
    let mut used = vec![false; p];
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for &size in sizes {
        // seed with the strongest free pair (or any free column), then grow
        // by the column most attached to the block
        let mut block = Vec::with_capacity(size);
        let free: Vec<usize> = (0..p).filter(|&k| !used[k]).collect();
        if size >= 2 {
            let mut seed = (free[0], free[1], f64::NEG_INFINITY);
            for (x, &i) in free.iter().enumerate() {
                for &j in &free[x + 1..] {
                    if stats.get(i, j) > seed.2 {
                        seed = (i, j, stats.get(i, j));
                    }
                }
            }
            block.extend([seed.0, seed.1]);
        } else {
            block.push(free[0]);
        }
        for &k in &block {
            used[k] = true;
        }
        while block.len() < size {
            let next = (0..p)
                .filter(|&k| !used[k])
                .map(|k| (k, block.iter().map(|&b| stats.get(k, b)).sum::<f64>()))
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
                .0;
            used[next] = true;
            block.push(next);
        }
        block.sort_unstable();
        blocks.push(block);
    }
    // swap improvement between blocks until no swap helps
    let mut score = routing_score(stats, &blocks);
    loop {
        let mut improved = false;
        for a in 0..blocks.len() {
            for b in (a + 1)..blocks.len() {
                for x in 0..blocks[a].len() {
                    for y in 0..blocks[b].len() {
                        let (ka, kb) = (blocks[a][x], blocks[b][y]);
                        blocks[a][x] = kb;
                        blocks[b][y] = ka;
                        let s = routing_score(stats, &blocks);
                        if s > score + 1e-15 {
                            score = s;
                            improved = true;
                        } else {
                            blocks[a][x] = ka;
                            blocks[b][y] = kb;
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    for b in blocks.iter_mut() {
        b.sort_unstable();
    }
    blocks
}

/// Block-coordinate refinement of `G_h0` from `init` under `groups`. A
/// single group leaves the initializer unchanged.
pub fn refine_gmica(
    y: &SeriesMatrix,
    groups: &GroupStructure,
    init: OrthoMatrix,
    cfg: &MicaConfig,
) -> Result<EstimationResult> {
    cfg.validate()?;
    let obj = CrossObjective::group(y, cfg.h0, groups)?;
    if init.dim() != y.ncols() {
        return Err(MicaError::DimensionMismatch(format!(
            "initializer is {}x{0}, series has {} columns",
            init.dim(),
            y.ncols()
        )));
    }
    let f0 = obj.value(init.matrix())?;
    if groups.group_count() == 1 {
        return EstimationResult::assemble(y, init, f0, groups.clone(), 0, vec![f0], true, 0);
    }
    let blocks = groups.all_members();
    let run = block_cayley_descent(&obj, init, f0, &blocks, &cfg.descent())?;
    EstimationResult::assemble(
        y,
        run.q,
        run.value,
        groups.clone(),
        0,
        run.trace,
        run.converged,
        run.iterations,
    )
}

/// Group MICA with a known partition: MICA estimate, columns routed into the
/// groups by within-group dependence, then block-coordinate refinement.
pub fn estimate_gmica_known(y: &SeriesMatrix, groups: &GroupStructure, cfg: &MicaConfig) -> Result<EstimationResult> {
    if groups.p() != y.ncols() {
        return Err(MicaError::InvalidGroups(format!(
            "groups cover {} components, series has {}",
            groups.p(),
            y.ncols()
        )));
    }
    let mica = estimate_mica(y, cfg)?;
    let stats = pair_stats(&mica.components, cfg.h0)?;
    let blocks = route_columns(&stats, groups.sizes());
    // column k of the initializer is the next unused routed component of its group
    let mut cursor = vec![0usize; groups.group_count()];
    let order: Vec<usize> = groups
        .assignment()
        .iter()
        .map(|&g| {
            let k = blocks[g][cursor[g]];
            cursor[g] += 1;
            k
        })
        .collect();
    let init = mica.a_hat.permute_columns(&order);
    let mut res = refine_gmica(y, groups, init, cfg)?;
    res.start_index = mica.start_index;
    Ok(res)
}

/// One pass of the grouping loop.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStep {
    pub groups: GroupStructure,
    pub r_hat: usize,
    /// `G_h0` at the permuted initializer of this pass.
    pub initial_objective: f64,
    /// `G_h0` after refinement.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct Gmica1Result {
    /// Separation matrix with the columns of each group contiguous.
    pub a_hat: OrthoMatrix,
    pub components: SeriesMatrix,
    pub groups: GroupStructure,
    pub r_hat: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub steps: Vec<OuterStep>,
}

/// Iterative group estimation: start from the MICA estimate, then repeat
/// {pair statistics, ratio edge count, graph grouping, contiguous column
/// permutation, block refinement} until the grouping repeats and the aligned
/// separation matrix moves by less than `eps_frob` in Frobenius norm, or
/// `max_outer` passes have run.
pub fn algorithm1(
    y: &SeriesMatrix,
    cfg: &MicaConfig,
    c0: f64,
    eps_frob: f64,
    max_outer: usize,
) -> Result<Gmica1Result> {
    if max_outer == 0 {
        return Err(MicaError::Config("max_outer must be at least 1".into()));
    }
    if !(eps_frob > 0.0) {
        return Err(MicaError::Config("eps_frob must be positive".into()));
    }
    let p = y.ncols();
    let mica = estimate_mica(y, cfg)?;
    let mut a = mica.a_hat;
    let mut components = mica.components;
    let mut prev_groups = GroupStructure::singletons(p);
    let mut steps = Vec::new();
    let mut converged = false;
    let mut last: Option<(GroupStructure, usize, f64)> = None;

    for _ in 0..max_outer {
        let stats = pair_stats(&components, cfg.h0)?;
        let r_hat = estimate_r(&stats, c0)?;
        let found = group_from_graph(&stats, r_hat)?;
        let repeated = found == prev_groups;
        let groups = GroupStructure::contiguous(found.sizes())?;
        let init = a.permute_columns(&found.contiguous_order());
        let obj = CrossObjective::group(y, cfg.h0, &groups)?;
        let initial_objective = obj.value(init.matrix())?;
        let refined = refine_gmica(y, &groups, init, cfg)?;

        let moved = {
            let alignment = align_columns(&a, &refined.a_hat)?;
            (refined.a_hat.aligned(&alignment).matrix() - a.matrix()).norm()
        };
        steps.push(OuterStep {
            groups: groups.clone(),
            r_hat,
            initial_objective,
            objective: refined.objective,
        });
        a = refined.a_hat;
        components = refined.components;
        last = Some((groups.clone(), r_hat, refined.objective));
        prev_groups = groups;
        if repeated && moved < eps_frob {
            converged = true;
            break;
        }
    }
    let (groups, r_hat, objective) = last.expect("at least one pass");
    Ok(Gmica1Result {
        a_hat: a,
        components,
        groups,
        r_hat,
        iterations: steps.len(),
        converged,
        objective,
        steps,
    })
}
