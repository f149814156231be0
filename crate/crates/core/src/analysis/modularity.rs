//! Multilayer modularity over time-windowed correlation graphs, its
//! generalized Louvain optimizer, and partition summaries.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::{self, Stream};
use crate::tensor::{pearson, Matrix};

/// Ordinal multilayer graph: one weighted adjacency per layer, with each
/// node coupled to its own copy in adjacent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredNetwork {
    pub layers: Vec<Matrix>,
    /// Resolution per layer.
    pub gamma: Vec<f64>,
    /// Inter-layer coupling between copies of a node in adjacent layers.
    pub coupling: f64,
}

impl LayeredNetwork {
    pub fn new(layers: Vec<Matrix>, gamma: f64, coupling: f64) -> Result<Self> {
        let net = Self {
            gamma: vec![gamma; layers.len()],
            layers,
            coupling,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.layers.first().map_or(0, Matrix::rows)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("multilayer network has no layers".into()));
        }
        let n = self.n_nodes();
        for (l, a) in self.layers.iter().enumerate() {
            if a.shape() != (n, n) {
                return Err(Error::shape("layer adjacency", format!("{n}x{n}"), format!("{:?}", a.shape())));
            }
            for i in 0..n {
                for j in 0..n {
                    let w = a.get(i, j);
                    if !(w >= 0.0 && w.is_finite()) || w != a.get(j, i) {
                        return Err(Error::InvalidArgument(format!(
                            "layer {l} adjacency must be symmetric, finite and nonnegative"
                        )));
                    }
                }
            }
        }
        if self.gamma.len() != self.layers.len() || self.gamma.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::InvalidArgument("resolution must be > 0 for every layer".into()));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::InvalidArgument("inter-layer coupling must be >= 0".into()));
        }
        Ok(())
    }

    fn strengths(&self, l: usize) -> (Vec<f64>, f64) {
        let a = &self.layers[l];
        let k: Vec<f64> = (0..a.rows()).map(|i| a.row(i).iter().sum()).collect();
        let two_m = k.iter().sum();
        (k, two_m)
    }

    /// Normalizer `2 mu`: total intra-layer strength plus the coupling summed
    /// over ordered pairs of adjacent layers and nodes.
    pub fn two_mu(&self) -> f64 {
        let intra: f64 = (0..self.n_layers()).map(|l| self.strengths(l).1).sum();
        let pairs = 2 * self.n_layers().saturating_sub(1) * self.n_nodes();
        intra + self.coupling * pairs as f64
    }

    /// Dense modularity matrix over supra-nodes `l * n + i`.
    pub fn supra_modularity_matrix(&self) -> Matrix {
        let (n, layers) = (self.n_nodes(), self.n_layers());
        let mut b = Matrix::zeros(n * layers, n * layers);
        for l in 0..layers {
            let (k, two_m) = self.strengths(l);
            let a = &self.layers[l];
            for i in 0..n {
                for j in 0..n {
                    let null = if two_m > 0.0 { self.gamma[l] * k[i] * k[j] / two_m } else { 0.0 };
                    b.set(l * n + i, l * n + j, a.get(i, j) - null);
                }
            }
            if l + 1 < layers {
                for i in 0..n {
                    b.set(l * n + i, (l + 1) * n + i, self.coupling);
                    b.set((l + 1) * n + i, l * n + i, self.coupling);
                }
            }
        }
        b
    }
}

/// Community label of every node in every layer, `labels[layer][node]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommunityAssignment {
    pub labels: Vec<Vec<usize>>,
}

impl CommunityAssignment {
    pub fn n_layers(&self) -> usize {
        self.labels.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, net: &LayeredNetwork) -> Result<()> {
        if self.n_layers() != net.n_layers() || self.labels.iter().any(|l| l.len() != net.n_nodes()) {
            return Err(Error::shape(
                "community assignment",
                format!("{}x{}", net.n_layers(), net.n_nodes()),
                format!("{}x{}", self.n_layers(), self.n_nodes()),
            ));
        }
        Ok(())
    }

    fn from_flat(flat: &[usize], n: usize, layers: usize) -> Self {
        // relabel by first appearance so equal partitions compare equal
        let mut map = BTreeMap::new();
        let mut next = 0;
        let relabeled: Vec<usize> = flat
            .iter()
            .map(|&c| {
                *map.entry(c).or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self {
            labels: (0..layers).map(|l| relabeled[l * n..(l + 1) * n].to_vec()).collect(),
        }
    }
}

/// Multilayer modularity of `assignment` on `net`.
pub fn modularity_q(net: &LayeredNetwork, assignment: &CommunityAssignment) -> Result<f64> {
    net.validate()?;
    assignment.validate(net)?;
    let two_mu = net.two_mu();
    if two_mu == 0.0 {
        return Ok(0.0);
    }
    let n = net.n_nodes();
    let mut q = 0.0;
    for l in 0..net.n_layers() {
        let (k, two_m) = net.strengths(l);
        let a = &net.layers[l];
        let g = &assignment.labels[l];
        for i in 0..n {
            for j in 0..n {
                if g[i] == g[j] {
                    let null = if two_m > 0.0 { net.gamma[l] * k[i] * k[j] / two_m } else { 0.0 };
                    q += a.get(i, j) - null;
                }
            }
        }
        if l + 1 < net.n_layers() {
            let h = &assignment.labels[l + 1];
            q += 2.0 * net.coupling * (0..n).filter(|&i| g[i] == h[i]).count() as f64;
        }
    }
    Ok(q / two_mu)
}

fn flat_quality(b: &Matrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut q = 0.0;
    for u in 0..n {
        let row = b.row(u);
        for v in 0..n {
            if labels[u] == labels[v] {
                q += row[v];
            }
        }
    }
    q
}

const GAIN_EPS: f64 = 1e-12;

/// Move tolerance relative to the largest entry of `b`.
fn gain_eps(b: &Matrix) -> f64 {
    GAIN_EPS * b.as_slice().iter().fold(1.0, |m: f64, x| m.max(x.abs()))
}

/// Single-node moves until no move improves the quality. Returns whether
/// anything moved.
fn local_moves(b: &Matrix, labels: &mut [usize], rng: &mut ChaCha8Rng) -> bool {
    let n = labels.len();
    let mut count = vec![0usize; n];
    for &c in labels.iter() {
        count[c] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut links = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut touched = Vec::with_capacity(n);
    let mut any = false;
    let eps = gain_eps(b);
    loop {
        order.shuffle(rng);
        let mut moved = false;
        for &u in &order {
            let own = labels[u];
            let row = b.row(u);
            for v in 0..n {
                if v != u {
                    let c = labels[v];
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    links[c] += row[v];
                }
            }
            let stay = links[own];
            let mut best = own;
            let mut best_gain = 0.0;
            touched.sort_unstable();
            for &c in &touched {
                let gain = links[c] - stay;
                if c != own && gain > best_gain + eps {
                    best = c;
                    best_gain = gain;
                }
            }
            // a community of its own
            if count[own] > 1 && -stay > best_gain + eps {
                best = count.iter().position(|&k| k == 0).expect("an empty label exists");
            }
            for &c in &touched {
                links[c] = 0.0;
                seen[c] = false;
            }
            links[own] = 0.0;
            touched.clear();
            if best != own {
                count[own] -= 1;
                count[best] += 1;
                labels[u] = best;
                moved = true;
                any = true;
            }
        }
        if !moved {
            return any;
        }
    }
}

/// Kernighan-Lin pass: repeatedly applies the best single-node move, even a
/// losing one, locking each moved node, then keeps the best prefix of the
/// sequence. `forced` fixes the first move, with `NEW_COMMUNITY` as target
/// for a fresh community. Returns whether the quality improved.
fn kl_refine(b: &Matrix, labels: &mut [usize], forced: Option<(usize, usize)>) -> bool {
    let n = labels.len();
    let mut k = compact(labels);
    let mut links = vec![vec![0.0; k]; n];
    for u in 0..n {
        let row = b.row(u);
        for v in 0..n {
            if v != u {
                links[u][labels[v]] += row[v];
            }
        }
    }
    let mut count = vec![0usize; k];
    for &c in labels.iter() {
        count[c] += 1;
    }
    let eps = gain_eps(b);
    let start = labels.to_vec();
    let mut locked = vec![false; n];
    let mut moves: Vec<(usize, usize)> = Vec::with_capacity(n);
    let (mut delta, mut best_delta, mut best_len) = (0.0, 0.0, 0);
    for step in 0..n {
        let mut pick: Option<(f64, usize, usize)> = None;
        if let (0, Some((u, c))) = (step, forced) {
            let stay = links[u][labels[u]];
            pick = Some(if c == NEW_COMMUNITY { (-stay, u, k) } else { (links[u][c] - stay, u, c) });
        }
        for u in 0..n {
            if locked[u] || (step == 0 && forced.is_some()) {
                continue;
            }
            let own = labels[u];
            let stay = links[u][own];
            for c in 0..k {
                if c == own || count[c] == 0 {
                    continue;
                }
                let gain = links[u][c] - stay;
                if pick.is_none_or(|(g, _, _)| gain > g + eps) {
                    pick = Some((gain, u, c));
                }
            }
            if count[own] > 1 && pick.is_none_or(|(g, _, _)| -stay > g + eps) {
                pick = Some((-stay, u, k));
            }
        }
        let Some((gain, u, mut c)) = pick else { break };
        if c == k {
            if let Some(empty) = count.iter().position(|&m| m == 0) {
                c = empty;
            } else {
                k += 1;
                count.push(0);
                links.iter_mut().for_each(|l| l.push(0.0));
            }
        }
        let own = labels[u];
        let row = b.row(u);
        for v in 0..n {
            if v != u {
                links[v][own] -= row[v];
                links[v][c] += row[v];
            }
        }
        count[own] -= 1;
        count[c] += 1;
        labels[u] = c;
        locked[u] = true;
        moves.push((u, own));
        delta += 2.0 * gain;
        if delta > best_delta + eps {
            best_delta = delta;
            best_len = moves.len();
        }
    }
    for &(u, own) in moves[best_len..].iter().rev() {
        labels[u] = own;
    }
    if best_len == 0 {
        labels.copy_from_slice(&start);
        return false;
    }
    compact(labels);
    true
}

const NEW_COMMUNITY: usize = usize::MAX;

/// Supra-graphs up to this size also get the exhaustive lookahead below.
const LOOKAHEAD_MAX_NODES: usize = 64;

/// Runs a Kernighan-Lin pass from every possible first move and takes the
/// first one that improves, until none does.
fn lookahead_refine(b: &Matrix, labels: &mut [usize]) -> bool {
    let n = labels.len();
    let mut any = false;
    'outer: loop {
        let k = compact(labels);
        let mut count = vec![0usize; k];
        for &c in labels.iter() {
            count[c] += 1;
        }
        for u in 0..n {
            let own = labels[u];
            let targets = (0..k)
                .filter(|&c| c != own)
                .chain((count[own] > 1).then_some(NEW_COMMUNITY));
            for c in targets {
                let mut trial = labels.to_vec();
                if kl_refine(b, &mut trial, Some((u, c))) {
                    labels.copy_from_slice(&trial);
                    any = true;
                    continue 'outer;
                }
            }
        }
        return any;
    }
}

/// Compacts labels to `0..k` and returns `k`.
fn compact(labels: &mut [usize]) -> usize {
    let mut map = BTreeMap::new();
    for c in labels.iter_mut() {
        let next = map.len();
        *c = *map.entry(*c).or_insert(next);
    }
    map.len()
}

fn aggregate(b: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let mut out = Matrix::zeros(k, k);
    for u in 0..labels.len() {
        let row = b.row(u);
        for v in 0..labels.len() {
            let (cu, cv) = (labels[u], labels[v]);
            out.set(cu, cv, out.get(cu, cv) + row[v]);
        }
    }
    out
}

/// Multilevel local moving starting from `labels` on the fine graph.
fn multilevel(b: &Matrix, labels: &mut [usize], rng: &mut ChaCha8Rng) {
    let mut k = compact(labels);
    let mut coarse = aggregate(b, labels, k);
    loop {
        let mut coarse_labels: Vec<usize> = (0..k).collect();
        if !local_moves(&coarse, &mut coarse_labels, rng) {
            return;
        }
        let k2 = compact(&mut coarse_labels);
        for c in labels.iter_mut() {
            *c = coarse_labels[*c];
        }
        if k2 == k {
            return;
        }
        coarse = aggregate(&coarse, &coarse_labels, k2);
        k = k2;
    }
}

pub const DEFAULT_RESTARTS: usize = 16;
const PERTURB: f64 = 0.25;

/// Generalized Louvain on the supra-graph. Each restart runs with its own
/// seeded node order; node-level and Kernighan-Lin refinement follow every
/// multilevel pass, and small supra-graphs also try a Kernighan-Lin pass from
/// every possible first move. Odd restarts begin from a random perturbation of the best
/// partition so far instead of singletons.
/// Returns the best partition found.
pub fn louvain_optimize(net: &LayeredNetwork, seed: u64) -> Result<CommunityAssignment> {
    louvain_with_restarts(net, seed, DEFAULT_RESTARTS)
}

pub fn louvain_with_restarts(net: &LayeredNetwork, seed: u64, restarts: usize) -> Result<CommunityAssignment> {
    net.validate()?;
    let (n, layers) = (net.n_nodes(), net.n_layers());
    let b = net.supra_modularity_matrix();
    let eps = gain_eps(&b);
    let total = n * layers;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = seed::rng(seed, Stream::Louvain, &[r as u64]);
        let mut labels: Vec<usize> = match &best {
            // odd restarts perturb the best partition so far
            Some((_, prev)) if r % 2 == 1 => prev
                .iter()
                .map(|&c| if rng.random_bool(PERTURB) { rng.random_range(0..total) } else { c })
                .collect(),
            _ => (0..total).collect(),
        };
        let mut q = flat_quality(&b, &labels);
        loop {
            multilevel(&b, &mut labels, &mut rng);
            local_moves(&b, &mut labels, &mut rng);
            kl_refine(&b, &mut labels, None);
            if total <= LOOKAHEAD_MAX_NODES {
                lookahead_refine(&b, &mut labels);
            }
            compact(&mut labels);
            let q2 = flat_quality(&b, &labels);
            if q2 <= q + eps {
                q = q.max(q2);
                break;
            }
            q = q2;
        }
        if best.as_ref().is_none_or(|(bq, _)| q > *bq + eps) {
            best = Some((q, labels));
        }
    }
    let (_, labels) = best.expect("at least one restart");
    Ok(CommunityAssignment::from_flat(&labels, n, layers))
}

/// Distinct labels per layer and their mean.
pub fn community_count(assignment: &CommunityAssignment) -> (Vec<usize>, f64) {
    let counts: Vec<usize> = assignment
        .labels
        .iter()
        .map(|l| l.iter().collect::<BTreeSet<_>>().len())
        .collect();
    let mean = if counts.is_empty() {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / counts.len() as f64
    };
    (counts, mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationarity {
    /// Per community label; communities seen in a single layer are absent.
    pub per_community: BTreeMap<usize, f64>,
    pub mean: Option<f64>,
}

/// Indicator correlation with the conventions identical -> 1 and
/// one-sided constant -> 0.
fn indicator_corr(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    pearson(a, b).unwrap_or(0.0)
}

/// Mean correlation of each community's membership vector between the
/// consecutive layers in which it appears.
pub fn stationarity(assignment: &CommunityAssignment) -> Stationarity {
    let n = assignment.n_nodes();
    let mut present: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (l, layer) in assignment.labels.iter().enumerate() {
        for &c in layer.iter().collect::<BTreeSet<_>>() {
            present.entry(c).or_default().push(l);
        }
    }
    let indicator = |c: usize, l: usize| -> Vec<f64> {
        (0..n)
            .map(|i| if assignment.labels[l][i] == c { 1.0 } else { 0.0 })
            .collect()
    };
    let mut per_community = BTreeMap::new();
    for (c, layers) in present {
        if layers.len() < 2 {
            continue;
        }
        let sum: f64 = layers
            .windows(2)
            .map(|w| indicator_corr(&indicator(c, w[0]), &indicator(c, w[1])))
            .sum();
        per_community.insert(c, sum / (layers.len() - 1) as f64);
    }
    let mean = if per_community.is_empty() {
        None
    } else {
        Some(per_community.values().sum::<f64>() / per_community.len() as f64)
    };
    Stationarity { per_community, mean }
}

/// Fraction of layers in which each node pair shares a community.
pub fn allegiance_matrix(assignment: &CommunityAssignment) -> Matrix {
    let (n, layers) = (assignment.n_nodes(), assignment.n_layers());
    let mut m = Matrix::zeros(n, n);
    if layers == 0 {
        return m;
    }
    for layer in &assignment.labels {
        for i in 0..n {
            for j in 0..n {
                if layer[i] == layer[j] {
                    m.set(i, j, m.get(i, j) + 1.0);
                }
            }
        }
    }
    m.as_mut_slice().iter_mut().for_each(|x| *x /= layers as f64);
    m
}

/// Correlation graphs over sliding windows of `activity` (steps x nodes).
/// Undefined correlations and the diagonal are 0; negative correlations are
/// clipped to 0 when `clip_negative` is set, otherwise rejected later by
/// validation.
pub fn build_layers(
    activity: &Matrix,
    window: usize,
    stride: usize,
    clip_negative: bool,
    gamma: f64,
    coupling: f64,
) -> Result<LayeredNetwork> {
    let (steps, n) = activity.shape();
    if window < 2 || stride == 0 || window > steps {
        return Err(Error::InvalidArgument(format!(
            "window {window} / stride {stride} do not fit {steps} steps"
        )));
    }
    let n_layers = (steps - window) / stride + 1;
    let columns: Vec<Vec<f64>> = (0..n).map(|i| (0..steps).map(|t| activity.get(t, i)).collect()).collect();
    let layers = (0..n_layers)
        .map(|l| {
            let span = l * stride..l * stride + window;
            let mut a = Matrix::zeros(n, n);
            for i in 0..n {
                for j in i + 1..n {
                    let r = pearson(&columns[i][span.clone()], &columns[j][span.clone()]).unwrap_or(0.0);
                    let w = if clip_negative { r.max(0.0) } else { r };
                    a.set(i, j, w);
                    a.set(j, i, w);
                }
            }
            a
        })
        .collect();
    LayeredNetwork::new(layers, gamma, coupling)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> LayeredNetwork {
        let mut a = Matrix::zeros(6, 6);
        for (i, j) in [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)] {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        LayeredNetwork::new(vec![a], 1.0, 1.0).unwrap()
    }

    fn one_layer(labels: &[usize]) -> CommunityAssignment {
        CommunityAssignment {
            labels: vec![labels.to_vec()],
        }
    }

    #[test]
    fn two_cliques_natural_partition() {
        let net = two_cliques();
        let q = modularity_q(&net, &one_layer(&[0, 0, 0, 1, 1, 1])).unwrap();
        assert!((q - 0.5).abs() < 1e-12);
        let found = louvain_optimize(&net, 0).unwrap();
        assert_eq!(found.labels[0], vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn single_community_on_complete_graph_is_zero() {
        let mut a = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    a.set(i, j, 1.0);
                }
            }
        }
        let net = LayeredNetwork::new(vec![a], 1.0, 1.0).unwrap();
        let q = modularity_q(&net, &one_layer(&[0; 4])).unwrap();
        assert!(q.abs() < 1e-12);
        // singletons: -sum k_i^2 / (2m)^2 = -4 * 9 / 144
        let q = modularity_q(&net, &one_layer(&[0, 1, 2, 3])).unwrap();
        assert!((q + 0.25).abs() < 1e-12);
    }

    #[test]
    fn label_permutation_invariance() {
        let net = two_cliques();
        let a = modularity_q(&net, &one_layer(&[0, 1, 0, 2, 2, 1])).unwrap();
        let b = modularity_q(&net, &one_layer(&[5, 3, 5, 9, 9, 3])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn supra_matrix_agrees_with_direct_formula() {
        let net = build_layers(
            &Matrix::from_fn(40, 5, |t, i| ((t * (i + 2)) as f64 * 0.37).sin()),
            10,
            10,
            true,
            1.0,
            0.5,
        )
        .unwrap();
        let labels: Vec<usize> = (0..20).map(|u| (u * 7) % 3).collect();
        let asg = CommunityAssignment::from_flat(&labels, 5, 4);
        let direct = modularity_q(&net, &asg).unwrap();
        let via_b = flat_quality(&net.supra_modularity_matrix(), &asg.labels.concat()) / net.two_mu();
        assert!((direct - via_b).abs() < 1e-12);
    }

    #[test]
    fn strong_coupling_aligns_layers() {
        let act = Matrix::from_fn(60, 6, |t, i| ((t * (i % 3 + 1)) as f64 * 0.9 + i as f64).sin());
        let net = build_layers(&act, 20, 20, true, 1.0, 1e6).unwrap();
        let asg = louvain_optimize(&net, 3).unwrap();
        for l in 1..asg.n_layers() {
            assert_eq!(asg.labels[l], asg.labels[0]);
        }
    }

    #[test]
    fn layer_count_and_clipping() {
        let act = Matrix::from_fn(200, 3, |t, i| match i {
            0 => t as f64,
            1 => -(t as f64),
            _ => ((t * t) % 7) as f64,
        });
        let net = build_layers(&act, 50, 50, true, 1.0, 1.0).unwrap();
        assert_eq!(net.n_layers(), 4);
        assert_eq!(net.layers[0].get(0, 1), 0.0);
        assert_eq!(net.layers[0].get(0, 0), 0.0);
        assert!(build_layers(&act, 50, 50, false, 1.0, 1.0).is_err());
        let same = Matrix::from_fn(100, 3, |t, i| ((t % 25) * (i + 1)) as f64);
        let net = build_layers(&same, 25, 25, true, 1.0, 1.0).unwrap();
        assert!(net.layers.iter().all(|l| l == &net.layers[0]));
    }

    #[test]
    fn counts() {
        let asg = CommunityAssignment {
            labels: vec![vec![0, 0, 1, 1, 2], vec![0, 0, 0, 0, 0]],
        };
        let (c, mean) = community_count(&asg);
        assert_eq!(c, vec![3, 1]);
        assert_eq!(mean, 2.0);
        let asg = CommunityAssignment {
            labels: vec![vec![0, 0, 1, 1], vec![0, 1, 2, 3]],
        };
        assert_eq!(community_count(&asg).1, 3.0);
    }

    #[test]
    fn stationarity_cases() {
        let constant = CommunityAssignment {
            labels: vec![vec![0, 0, 1, 1]; 3],
        };
        let s = stationarity(&constant);
        assert_eq!(s.per_community.len(), 2);
        assert_eq!(s.mean, Some(1.0));

        let once = CommunityAssignment {
            labels: vec![vec![0, 0, 2, 2], vec![0, 0, 1, 1]],
        };
        let s = stationarity(&once);
        assert_eq!(s.per_community.keys().copied().collect::<Vec<_>>(), vec![0]);

        // community 0: [1,1,0,0] -> [1,0,0,0]; r = 1/sqrt(3)
        let half = CommunityAssignment {
            labels: vec![vec![0, 0, 1, 1], vec![0, 1, 1, 1]],
        };
        let s = stationarity(&half);
        assert!((s.per_community[&0] - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((s.per_community[&1] - 1.0 / 3f64.sqrt()).abs() < 1e-12);

        let all_one = CommunityAssignment {
            labels: vec![vec![0, 0, 0], vec![0, 0, 0]],
        };
        assert_eq!(stationarity(&all_one).mean, Some(1.0));
    }

    #[test]
    fn allegiance() {
        let single = CommunityAssignment {
            labels: vec![vec![0, 1, 0]],
        };
        let m = allegiance_matrix(&single);
        assert_eq!(m.as_slice(), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let switching = CommunityAssignment {
            labels: vec![vec![0, 0, 1], vec![0, 1, 1]],
        };
        let m = allegiance_matrix(&switching);
        assert_eq!(m.get(0, 1), 0.5);
        assert_eq!(m.get(1, 2), 0.5);
        assert_eq!(m.get(0, 2), 0.0);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 1.0);
        }
    }

    #[test]
    fn louvain_beats_trivial_partitions() {
        let act = Matrix::from_fn(90, 12, |t, i| ((t * (i % 4 + 1)) as f64 * 0.31).cos() + 0.01 * i as f64);
        let net = build_layers(&act, 30, 30, true, 1.0, 1.0).unwrap();
        let asg = louvain_optimize(&net, 11).unwrap();
        let q = modularity_q(&net, &asg).unwrap();
        let singletons = CommunityAssignment::from_flat(&(0..36).collect::<Vec<_>>(), 12, 3);
        let one = CommunityAssignment::from_flat(&[0; 36], 12, 3);
        assert!(q >= modularity_q(&net, &singletons).unwrap());
        assert!(q >= modularity_q(&net, &one).unwrap());
        assert_eq!(louvain_optimize(&net, 11).unwrap(), asg);
    }
}
