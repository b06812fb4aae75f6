//! Fusion of KG and semantic vectors, graph-attention propagation and the
//! bilinear click scorer.
//!
//! * fusion: `z = tanh(W_f [h_kg ⊕ e_sem] + b_f)`
//! * attention: `α_ij = softmax_j LeakyReLU(aᵀ [W_g h_i ‖ W_g h_j])` over the
//!   distinct neighbors of `i` (self excluded)
//! * layer: `h'_i = tanh(Σ_j α_ij W_g h_j)`, or `tanh(W_g h_i)` for isolated
//!   nodes
//! * score: `σ(h_uᵀ W_r h_a)`
//!
//! Node states are `Array2` with one row per entity index.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationKind};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

pub(crate) fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new(-bound, bound).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `d_h × (d_k + d_s)`, KG columns first.
    pub w_f: Array2<f64>,
    pub b_f: Array1<f64>,
}

impl FusionParams {
    pub fn random<R: Rng + ?Sized>(hidden: usize, kg_dim: usize, sem_dim: usize, rng: &mut R) -> Self {
        FusionParams {
            w_f: glorot(hidden, kg_dim + sem_dim, rng),
            b_f: Array1::zeros(hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    pub entity: EntityId,
    pub vector: Array1<f64>,
}

pub fn fuse(h_kg: ArrayView1<f64>, e_sem: ArrayView1<f64>, params: &FusionParams) -> Result<Array1<f64>> {
    let (rows, cols) = params.w_f.dim();
    if h_kg.len() + e_sem.len() != cols || params.b_f.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "fusion expects {cols} inputs / {rows} outputs, got {}+{} / bias {}",
            h_kg.len(),
            e_sem.len(),
            params.b_f.len()
        )));
    }
    let k = h_kg.len();
    let mut out = params.w_f.slice(s![.., ..k]).dot(&h_kg);
    out += &params.w_f.slice(s![.., k..]).dot(&e_sem);
    out += &params.b_f;
    out.mapv_inplace(f64::tanh);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub w_g: Array2<f64>,
    /// `[a_self ; a_neighbor]`, length `2·d_h`.
    pub a: Array1<f64>,
    pub leaky_slope: f64,
}

impl GatLayerParams {
    pub fn random<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let w_g = glorot(hidden, hidden, rng);
        let a = glorot(1, 2 * hidden, rng).into_shape_with_order(2 * hidden).unwrap();
        GatLayerParams {
            w_g,
            a,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_g.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.w_g.ncols() != d || self.a.len() != 2 * d {
            return Err(Error::ShapeMismatch(format!(
                "GAT layer W_g {:?}, a {}",
                self.w_g.dim(),
                self.a.len()
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidConfig(format!("leaky slope {} not in (0,1)", self.leaky_slope)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatStack {
    pub layers: Vec<GatLayerParams>,
}

impl GatStack {
    pub fn random<R: Rng + ?Sized>(hidden: usize, depth: usize, rng: &mut R) -> Self {
        GatStack {
            layers: (0..depth).map(|_| GatLayerParams::random(hidden, rng)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearParams {
    pub w_r: Array2<f64>,
}

impl BilinearParams {
    pub fn random<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        BilinearParams {
            w_r: glorot(hidden, hidden, rng),
        }
    }
}

/// `σ(h_userᵀ W_r h_ad)`.
pub fn predict_score(h_user: ArrayView1<f64>, h_ad: ArrayView1<f64>, params: &BilinearParams) -> Result<f64> {
    let (r, c) = params.w_r.dim();
    if h_user.len() != r || h_ad.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "W_r is {r}x{c}, states are {} and {}",
            h_user.len(),
            h_ad.len()
        )));
    }
    Ok(logistic(h_user.dot(&params.w_r.dot(&h_ad))))
}

/// Attention coefficients of one node over its neighbors, in neighbor order.
pub fn attention_coeffs(
    self_state: ArrayView1<f64>,
    neighbor_states: &[ArrayView1<f64>],
    params: &GatLayerParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    if neighbor_states.is_empty() {
        return Err(Error::IsolatedNode);
    }
    let d = params.dim();
    let (a_self, a_nb) = (params.a.slice(s![..d]), params.a.slice(s![d..]));
    let s_i = a_self.dot(&params.w_g.dot(&self_state));
    let logits: Vec<f64> = neighbor_states
        .iter()
        .map(|h| leaky_relu(s_i + a_nb.dot(&params.w_g.dot(h)), params.leaky_slope))
        .collect();
    Ok(softmax(&logits))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Compressed neighbor lists: `targets[offsets[i]..offsets[i+1]]` are the
/// distinct neighbors of node `i`, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    pub offsets: Vec<usize>,
    pub targets: Vec<u32>,
}

impl Neighborhoods {
    pub fn from_graph(graph: &KnowledgeGraph) -> Self {
        Neighborhoods::excluding(graph, &[])
    }

    /// Neighborhoods that ignore edges of the listed relations.
    pub fn excluding(graph: &KnowledgeGraph, relations: &[RelationKind]) -> Self {
        let mut offsets = Vec::with_capacity(graph.entity_count() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for adj in graph.adjacency() {
            let start = targets.len();
            targets.extend(
                adj.iter()
                    .filter(|n| !relations.contains(&n.relation))
                    .map(|n| n.entity.0),
            );
            targets[start..].sort_unstable();
            let mut keep = start;
            for r in start..targets.len() {
                if r == start || targets[r] != targets[keep - 1] {
                    targets[keep] = targets[r];
                    keep += 1;
                }
            }
            targets.truncate(keep);
            offsets.push(targets.len());
        }
        Neighborhoods { offsets, targets }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }
}

/// Intermediate values of one GAT layer kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTape {
    /// `H W_gᵀ`: row `i` is `W_g h_i`.
    pub projected: Array2<f64>,
    /// Per edge, aligned with `Neighborhoods::targets`.
    pub alpha: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub output: Array2<f64>,
}

pub fn layer_forward(input: ArrayView2<f64>, params: &GatLayerParams, nbrs: &Neighborhoods) -> LayerTape {
    let d = params.dim();
    let projected = input.dot(&params.w_g.t());
    let s_self = projected.dot(&params.a.slice(s![..d]));
    let s_nb = projected.dot(&params.a.slice(s![d..]));
    let n = nbrs.node_count();
    let mut alpha = vec![0.0; nbrs.edge_count()];
    let mut pre_activation = vec![0.0; nbrs.edge_count()];
    let mut output = Array2::zeros((n, d));
    for i in 0..n {
        let (lo, hi) = (nbrs.offsets[i], nbrs.offsets[i + 1]);
        let mut out = output.row_mut(i);
        if lo == hi {
            out.assign(&projected.row(i));
        } else {
            let mut max = f64::NEG_INFINITY;
            for e in lo..hi {
                let pre = s_self[i] + s_nb[nbrs.targets[e] as usize];
                pre_activation[e] = pre;
                let l = leaky_relu(pre, params.leaky_slope);
                alpha[e] = l;
                max = max.max(l);
            }
            let mut sum = 0.0;
            for a in &mut alpha[lo..hi] {
                *a = (*a - max).exp();
                sum += *a;
            }
            for e in lo..hi {
                alpha[e] /= sum;
                out.scaled_add(alpha[e], &projected.row(nbrs.targets[e] as usize));
            }
        }
        out.mapv_inplace(f64::tanh);
    }
    LayerTape {
        projected,
        alpha,
        pre_activation,
        output,
    }
}

/// Gradient buffers for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w_g: Array2<f64>,
    pub a: Array1<f64>,
}

/// Back-propagates `g_out` (gradient w.r.t. the layer output) and returns
/// the gradient w.r.t. the layer input.
pub fn layer_backward(
    input: ArrayView2<f64>,
    params: &GatLayerParams,
    nbrs: &Neighborhoods,
    tape: &LayerTape,
    g_out: ArrayView2<f64>,
    grads: &mut LayerGrads,
) -> Array2<f64> {
    let d = params.dim();
    let n = nbrs.node_count();
    let (a_self, a_nb) = (params.a.slice(s![..d]), params.a.slice(s![d..]));
    let g_m = &g_out * &tape.output.mapv(|h| 1.0 - h * h);
    let mut g_proj = Array2::<f64>::zeros((n, d));
    let mut g_s_self = vec![0.0; n];
    let mut g_s_nb = vec![0.0; n];
    for i in 0..n {
        let (lo, hi) = (nbrs.offsets[i], nbrs.offsets[i + 1]);
        if lo == hi {
            g_proj.row_mut(i).scaled_add(1.0, &g_m.row(i));
            continue;
        }
        let gm = g_m.row(i);
        let mut galpha = Vec::with_capacity(hi - lo);
        let mut mean = 0.0;
        for e in lo..hi {
            let j = nbrs.targets[e] as usize;
            let ga = gm.dot(&tape.projected.row(j));
            mean += tape.alpha[e] * ga;
            galpha.push(ga);
            g_proj.row_mut(j).scaled_add(tape.alpha[e], &gm);
        }
        for (k, e) in (lo..hi).enumerate() {
            let j = nbrs.targets[e] as usize;
            let slope = if tape.pre_activation[e] > 0.0 { 1.0 } else { params.leaky_slope };
            let g_pre = tape.alpha[e] * (galpha[k] - mean) * slope;
            g_s_self[i] += g_pre;
            g_s_nb[j] += g_pre;
        }
    }
    let g_s_self = Array1::from(g_s_self);
    let g_s_nb = Array1::from(g_s_nb);
    grads.a.slice_mut(s![..d]).scaled_add(1.0, &tape.projected.t().dot(&g_s_self));
    grads.a.slice_mut(s![d..]).scaled_add(1.0, &tape.projected.t().dot(&g_s_nb));
    for i in 0..n {
        let mut row = g_proj.row_mut(i);
        row.scaled_add(g_s_self[i], &a_self);
        row.scaled_add(g_s_nb[i], &a_nb);
    }
    grads.w_g += &g_proj.t().dot(&input);
    g_proj.dot(&params.w_g)
}

fn check_states(graph: &KnowledgeGraph, h: ArrayView2<f64>, d: usize) -> Result<()> {
    if h.nrows() != graph.entity_count() {
        return Err(Error::MissingState {
            states: h.nrows(),
            nodes: graph.entity_count(),
        });
    }
    if h.ncols() != d {
        return Err(Error::ShapeMismatch(format!("state width {} vs {d}", h.ncols())));
    }
    Ok(())
}

pub fn gat_layer(graph: &KnowledgeGraph, h: ArrayView2<f64>, params: &GatLayerParams) -> Result<Array2<f64>> {
    params.validate()?;
    check_states(graph, h, params.dim())?;
    Ok(layer_forward(h, params, &Neighborhoods::from_graph(graph)).output)
}

pub fn forward_stack(graph: &KnowledgeGraph, h0: ArrayView2<f64>, stack: &GatStack) -> Result<Array2<f64>> {
    let nbrs = Neighborhoods::from_graph(graph);
    let mut h = h0.to_owned();
    for layer in &stack.layers {
        layer.validate()?;
        check_states(graph, h.view(), layer.dim())?;
        h = layer_forward(h.view(), layer, &nbrs).output;
    }
    Ok(h)
}

/// Fuses every row pair of `kg` and `sem`.
pub fn fuse_rows(kg: ArrayView2<f64>, sem: ArrayView2<f64>, params: &FusionParams) -> Array2<f64> {
    let k = kg.ncols();
    let mut z = kg.dot(&params.w_f.slice(s![.., ..k]).t());
    z += &sem.dot(&params.w_f.slice(s![.., k..]).t());
    z += &params.b_f.view().insert_axis(Axis(0));
    z.mapv_inplace(f64::tanh);
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, EntityKind, NamedTriple, RelationKind};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_graph(n: usize, edges: usize, seed: u64) -> KnowledgeGraph {
        let mut r = rng(seed);
        let ents: Vec<Entity> = (0..n).map(|i| Entity::new(format!("n{i}"), EntityKind::Product, "")).collect();
        let mut triples = Vec::new();
        for _ in 0..edges {
            let a = r.random_range(0..n);
            let b = r.random_range(0..n);
            if a != b {
                triples.push(NamedTriple::new(format!("n{a}"), RelationKind::BelongsTo, format!("n{b}")));
            }
        }
        KnowledgeGraph::build(ents, &triples).unwrap()
    }

    fn random_states(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_simple_fn((n, d), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn fuse_examples() {
        let zero = FusionParams {
            w_f: Array2::zeros((3, 4)),
            b_f: Array1::zeros(3),
        };
        let out = fuse(array![1.0, 2.0].view(), array![3.0, 4.0].view(), &zero).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        let sat = FusionParams {
            w_f: Array2::zeros((3, 4)),
            b_f: array![1e3, 0.0, -0.5],
        };
        let out = fuse(array![1.0, 2.0].view(), array![3.0, 4.0].view(), &sat).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-6);
        assert!(out.iter().all(|v| v.abs() <= 1.0));
        assert!(matches!(
            fuse(array![1.0].view(), array![3.0, 4.0].view(), &sat),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fuse_matches_scalar_oracle() {
        let p = FusionParams::random(4, 4, 4, &mut rng(1));
        let p = FusionParams {
            b_f: array![0.1, -0.2, 0.3, 0.05],
            ..p
        };
        let h = array![0.5, -0.1, 0.2, 0.9];
        let e = array![-0.3, 0.4, 0.0, 0.7];
        let out = fuse(h.view(), e.view(), &p).unwrap();
        let x: Vec<f64> = h.iter().chain(e.iter()).copied().collect();
        for r in 0..4 {
            let mut acc = p.b_f[r];
            for c in 0..8 {
                acc += p.w_f[[r, c]] * x[c];
            }
            assert!((out[r] - acc.tanh()).abs() < 1e-6);
        }
        let rows = fuse_rows(h.view().insert_axis(Axis(0)), e.view().insert_axis(Axis(0)), &p);
        assert!((&rows.row(0) - &out).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn attention_examples() {
        let p = GatLayerParams::random(3, &mut rng(2));
        let me = array![0.1, 0.2, 0.3];
        let nb = array![0.5, -0.5, 0.0];
        assert_eq!(attention_coeffs(me.view(), &[nb.view()], &p).unwrap(), vec![1.0]);

        let flat = GatLayerParams {
            a: Array1::zeros(6),
            ..p.clone()
        };
        let nbs = [nb.view(), me.view(), nb.view(), me.view()];
        let alpha = attention_coeffs(me.view(), &nbs, &flat).unwrap();
        assert!(alpha.iter().all(|a| (a - 0.25).abs() < 1e-15));
        assert!(attention_coeffs(me.view(), &[], &p).is_err());
    }

    #[test]
    fn attention_matches_hand_oracle() {
        let p = GatLayerParams {
            w_g: array![[1.0, 0.0], [0.5, -1.0]],
            a: array![0.3, -0.2, 1.0, 0.4],
            leaky_slope: 0.2,
        };
        let me = array![1.0, 2.0];
        let nbs = [array![0.0, 1.0], array![-2.0, 0.5], array![1.0, 1.0]];
        let views: Vec<_> = nbs.iter().map(|n| n.view()).collect();
        let alpha = attention_coeffs(me.view(), &views, &p).unwrap();
        let wh = |v: &Array1<f64>| [v[0], 0.5 * v[0] - v[1]];
        let wi = wh(&me);
        let logits: Vec<f64> = nbs
            .iter()
            .map(|n| {
                let wj = wh(n);
                let x = 0.3 * wi[0] - 0.2 * wi[1] + 1.0 * wj[0] + 0.4 * wj[1];
                if x > 0.0 {
                    x
                } else {
                    0.2 * x
                }
            })
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (a, l) in alpha.iter().zip(&logits) {
            assert!((a - l.exp() / z).abs() < 1e-6);
        }
    }

    #[test]
    fn single_neighbor_and_star_cases() {
        let ents = vec![
            Entity::new("c", EntityKind::Category, ""),
            Entity::new("x", EntityKind::Product, ""),
            Entity::new("y", EntityKind::Product, ""),
            Entity::new("z", EntityKind::Product, ""),
        ];
        let triples: Vec<_> = ["x", "y", "z"]
            .iter()
            .map(|p| NamedTriple::new(*p, RelationKind::BelongsTo, "c"))
            .collect();
        let g = KnowledgeGraph::build(ents, &triples).unwrap();
        let v = array![0.3, -0.7];
        let mut h = Array2::zeros((4, 2));
        for i in 1..4 {
            h.row_mut(i).assign(&v);
        }
        h.row_mut(0).assign(&array![0.9, 0.9]);
        let id = GatLayerParams {
            w_g: Array2::eye(2),
            a: Array1::zeros(4),
            leaky_slope: 0.2,
        };
        let out = gat_layer(&g, h.view(), &id).unwrap();
        assert!((&out.row(0) - &v.mapv(f64::tanh)).iter().all(|e| e.abs() < 1e-12));
        // leaves have the single neighbor c
        let p = GatLayerParams::random(2, &mut rng(3));
        let out = gat_layer(&g, h.view(), &p).unwrap();
        let expect = p.w_g.dot(&h.row(0)).mapv(f64::tanh);
        assert!((&out.row(1) - &expect).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn isolated_node_falls_back_to_self() {
        let g = KnowledgeGraph::build(vec![Entity::new("solo", EntityKind::Ad, "")], &[]).unwrap();
        let p = GatLayerParams::random(3, &mut rng(4));
        let h = array![[0.2, -0.4, 0.6]];
        let out = gat_layer(&g, h.view(), &p).unwrap();
        let expect = p.w_g.dot(&h.row(0)).mapv(f64::tanh);
        assert!((&out.row(0) - &expect).iter().all(|e| e.abs() < 1e-12));
        assert!(gat_layer(&g, Array2::zeros((2, 3)).view(), &p).is_err());
    }

    #[test]
    fn layer_matches_dense_oracle() {
        let g = random_graph(10, 18, 5);
        let d = 4;
        let h = random_states(10, d, 6);
        let p = GatLayerParams::random(d, &mut rng(7));
        let out = gat_layer(&g, h.view(), &p).unwrap();

        let wh = h.dot(&p.w_g.t());
        let mut dense = Array2::<f64>::zeros((10, 10));
        for i in 0..10 {
            let nb = g.neighbor_set(EntityId(i as u32));
            if nb.is_empty() {
                dense[[i, i]] = 1.0;
                continue;
            }
            let logits: Vec<f64> = nb
                .iter()
                .map(|j| {
                    let mut x = 0.0;
                    for k in 0..d {
                        x += p.a[k] * wh[[i, k]] + p.a[d + k] * wh[[j.index(), k]];
                    }
                    leaky_relu(x, 0.2)
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for (j, l) in nb.iter().zip(&logits) {
                dense[[i, j.index()]] = l.exp() / z;
            }
        }
        let oracle = dense.dot(&wh).mapv(f64::tanh);
        assert!((&out - &oracle).iter().all(|e| e.abs() < 1e-6));
    }

    #[test]
    fn stack_matches_unrolled_layers() {
        let g = random_graph(8, 12, 8);
        let h0 = random_states(8, 4, 9);
        let stack = GatStack::random(4, 3, &mut rng(10));
        let out = forward_stack(&g, h0.view(), &stack).unwrap();
        let mut h = h0.clone();
        for l in &stack.layers {
            h = gat_layer(&g, h.view(), l).unwrap();
        }
        assert_eq!(out, h);
        assert_eq!(out, forward_stack(&g, h0.view(), &stack).unwrap());
    }

    #[test]
    fn identity_stack_is_triple_tanh() {
        // two nodes joined by one edge with equal states behave like a self-loop
        let ents = vec![Entity::new("a", EntityKind::Ad, ""), Entity::new("b", EntityKind::Product, "")];
        let g = KnowledgeGraph::build(ents, &[NamedTriple::new("a", RelationKind::Promotes, "b")]).unwrap();
        let layer = GatLayerParams {
            w_g: Array2::eye(2),
            a: Array1::zeros(4),
            leaky_slope: 0.2,
        };
        let stack = GatStack {
            layers: vec![layer.clone(), layer.clone(), layer],
        };
        let h0 = array![[0.8, -1.5], [0.8, -1.5]];
        let out = forward_stack(&g, h0.view(), &stack).unwrap();
        let expect = h0.mapv(|v| v.tanh().tanh().tanh());
        assert!((&out - &expect).iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn bilinear_examples() {
        let zero = BilinearParams { w_r: Array2::zeros((2, 2)) };
        assert_eq!(predict_score(array![1.0, 2.0].view(), array![3.0, 4.0].view(), &zero).unwrap(), 0.5);
        let eye = BilinearParams { w_r: Array2::eye(2) };
        assert_eq!(predict_score(array![1.0, 0.0].view(), array![0.0, 1.0].view(), &eye).unwrap(), 0.5);
        let s = predict_score(array![1.0, 0.0].view(), array![1.0, 0.0].view(), &eye).unwrap();
        assert!((s - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(predict_score(array![1.0].view(), array![1.0, 0.0].view(), &eye).is_err());
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        let g = random_graph(7, 12, 11);
        let nbrs = Neighborhoods::from_graph(&g);
        let d = 3;
        let h = random_states(7, d, 12);
        let p = GatLayerParams::random(d, &mut rng(13));
        let w = random_states(7, d, 14);
        let objective = |h: &Array2<f64>, p: &GatLayerParams| (&layer_forward(h.view(), p, &nbrs).output * &w).sum();

        let tape = layer_forward(h.view(), &p, &nbrs);
        let mut grads = LayerGrads {
            w_g: Array2::zeros((d, d)),
            a: Array1::zeros(2 * d),
        };
        let gh = layer_backward(h.view(), &p, &nbrs, &tape, w.view(), &mut grads);
        let eps = 1e-6;
        let check = |a: f64, fd: f64| assert!((a - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{a} vs {fd}");
        for idx in 0..h.len() {
            let (r, c) = (idx / d, idx % d);
            let mut hp = h.clone();
            hp[[r, c]] += eps;
            let mut hm = h.clone();
            hm[[r, c]] -= eps;
            check(gh[[r, c]], (objective(&hp, &p) - objective(&hm, &p)) / (2.0 * eps));
        }
        for idx in 0..d * d {
            let (r, c) = (idx / d, idx % d);
            let mut pp = p.clone();
            pp.w_g[[r, c]] += eps;
            let mut pm = p.clone();
            pm.w_g[[r, c]] -= eps;
            check(grads.w_g[[r, c]], (objective(&h, &pp) - objective(&h, &pm)) / (2.0 * eps));
        }
        for k in 0..2 * d {
            let mut pp = p.clone();
            pp.a[k] += eps;
            let mut pm = p.clone();
            pm.a[k] -= eps;
            check(grads.a[k], (objective(&h, &pp) - objective(&h, &pm)) / (2.0 * eps));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn attention_weights_form_a_distribution(
                seed in any::<u64>(),
                d in 1usize..8,
                k in 1usize..10,
            ) {
                let p = GatLayerParams::random(d, &mut rng(seed));
                let states = random_states(k + 1, d, seed ^ 1);
                let nb: Vec<ArrayView1<f64>> = (1..=k).map(|i| states.row(i)).collect();
                let alpha = attention_coeffs(states.row(0), &nb, &p).unwrap();
                prop_assert_eq!(alpha.len(), k);
                prop_assert!(alpha.iter().all(|&a| a > 0.0));
                prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn layer_alphas_sum_to_one_per_node_and_outputs_are_bounded(
                n in 2usize..30,
                edges in 0usize..80,
                seed in any::<u64>(),
            ) {
                let g = random_graph(n, edges, seed);
                let nbrs = Neighborhoods::from_graph(&g);
                let stack = GatStack::random(5, 3, &mut rng(seed ^ 2));
                let tape = layer_forward(random_states(n, 5, seed ^ 3).view(), &stack.layers[0], &nbrs);
                for i in 0..n {
                    let (lo, hi) = (nbrs.offsets[i], nbrs.offsets[i + 1]);
                    if lo < hi {
                        prop_assert!((tape.alpha[lo..hi].iter().sum::<f64>() - 1.0).abs() < 1e-9);
                        prop_assert!(tape.alpha[lo..hi].iter().all(|&a| a > 0.0));
                    }
                }
                let out = forward_stack(&g, random_states(n, 5, seed ^ 4).view(), &stack).unwrap();
                prop_assert!(out.iter().all(|v| v.abs() < 1.0));
            }

            #[test]
            fn bilinear_score_swaps_with_transpose(seed in any::<u64>(), d in 1usize..8) {
                let p = BilinearParams::random(d, &mut rng(seed));
                let s = random_states(2, d, seed ^ 5);
                let fwd = predict_score(s.row(0), s.row(1), &p).unwrap();
                let t = BilinearParams { w_r: p.w_r.t().to_owned() };
                let back = predict_score(s.row(1), s.row(0), &t).unwrap();
                prop_assert!((fwd - back).abs() < 1e-12);
                prop_assert!(fwd > 0.0 && fwd < 1.0);
                let sym = BilinearParams { w_r: &p.w_r + &p.w_r.t() };
                let a = predict_score(s.row(0), s.row(1), &sym).unwrap();
                let b = predict_score(s.row(1), s.row(0), &sym).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
