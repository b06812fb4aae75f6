//! Translational knowledge-graph embeddings: `h + r ≈ t`, scored by L2
//! distance and trained with a margin hinge over corrupted triples.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayViewMut2, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationKind, Triple};
use crate::snapshot;

pub const DEFAULT_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct KgEmbeddings {
    /// `|V| × d_k`
    pub entities: Array2<f64>,
    /// `|relation kinds| × d_k`
    pub relations: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            gamma: 1.0,
            learning_rate: 0.01,
            negatives_per_positive: 1,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::InvalidConfig("negatives_per_positive must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgGradients {
    pub entities: Array2<f64>,
    pub relations: Array2<f64>,
}

impl KgGradients {
    pub fn zeros_like(emb: &KgEmbeddings) -> Self {
        KgGradients {
            entities: Array2::zeros(emb.entities.raw_dim()),
            relations: Array2::zeros(emb.relations.raw_dim()),
        }
    }
}

impl KgEmbeddings {
    /// Uniform init in `±6/√d` per coordinate, entity rows then projected
    /// into the unit ball.
    pub fn random<R: Rng + ?Sized>(n_entities: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw = |rows: usize| Array2::from_shape_simple_fn((rows, dim), || rng.random_range(-bound..bound));
        let entities = draw(n_entities);
        let relations = draw(RelationKind::COUNT);
        let mut emb = KgEmbeddings { entities, relations };
        emb.renormalize();
        emb
    }

    pub fn dim(&self) -> usize {
        self.entities.ncols()
    }

    /// `‖h + r − t‖₂`.
    pub fn score_triple(&self, triple: &Triple) -> Result<f64> {
        let (h, t) = (triple.head.index(), triple.tail.index());
        if h >= self.entities.nrows() {
            return Err(Error::UnknownEntity(format!("#{h}")));
        }
        if t >= self.entities.nrows() {
            return Err(Error::UnknownEntity(format!("#{t}")));
        }
        if triple.relation.index() >= self.relations.nrows() {
            return Err(Error::UnknownRelation(triple.relation.to_string()));
        }
        Ok(self.distance(triple))
    }

    fn distance(&self, t: &Triple) -> f64 {
        translation_residual(
            self.entities.row(t.head.index()),
            self.relations.row(t.relation.index()),
            self.entities.row(t.tail.index()),
        )
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
    }

    /// Projects every entity row with norm above 1 back onto the unit sphere.
    pub fn renormalize(&mut self) {
        for mut row in self.entities.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 1.0 {
                row /= norm;
            }
        }
    }

    /// Plain SGD update followed by entity renormalization.
    pub fn sgd_step(&mut self, grads: &KgGradients, learning_rate: f64) -> Result<()> {
        if grads.entities.dim() != self.entities.dim() || grads.relations.dim() != self.relations.dim() {
            return Err(Error::ShapeMismatch(format!(
                "gradients {:?}/{:?} vs parameters {:?}/{:?}",
                grads.entities.dim(),
                grads.relations.dim(),
                self.entities.dim(),
                self.relations.dim()
            )));
        }
        self.entities.scaled_add(-learning_rate, &grads.entities);
        self.relations.scaled_add(-learning_rate, &grads.relations);
        self.renormalize();
        Ok(())
    }

    /// Writes the `KGSR` v1 matrix (entity rows, then relation rows) and the
    /// row mapping to `<path>.ids.tsv`.
    pub fn save(&self, path: &Path, graph: &KnowledgeGraph) -> Result<()> {
        if graph.entity_count() != self.entities.nrows() {
            return Err(Error::ShapeMismatch("graph and embedding row counts differ".into()));
        }
        let rows = self.entities.nrows() + self.relations.nrows();
        let data: Vec<f32> = self
            .entities
            .iter()
            .chain(self.relations.iter())
            .map(|&v| v as f32)
            .collect();
        snapshot::write_file(path, &snapshot::encode_matrix(rows, self.dim(), &data)?)?;

        let mut ids = String::new();
        for (i, e) in graph.entities().iter().enumerate() {
            let _ = writeln!(ids, "{i}\tentity\t{}", e.id);
        }
        for r in RelationKind::ALL {
            let _ = writeln!(ids, "{}\trelation\t{r}", self.entities.nrows() + r.index());
        }
        std::fs::write(id_map_path(path), ids).map_err(|e| Error::io(id_map_path(path), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (rows, dim, data) = snapshot::decode_matrix(&snapshot::read_file(path)?)?;
        let n_entities = rows
            .checked_sub(RelationKind::COUNT)
            .ok_or_else(|| Error::CorruptSnapshot("fewer rows than relation kinds".into()))?;
        let all = Array2::from_shape_vec((rows, dim), data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        Ok(KgEmbeddings {
            entities: all.slice(ndarray::s![..n_entities, ..]).to_owned(),
            relations: all.slice(ndarray::s![n_entities.., ..]).to_owned(),
        })
    }
}

pub fn id_map_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids.tsv");
    PathBuf::from(s)
}

fn translation_residual(h: ArrayView1<f64>, r: ArrayView1<f64>, t: ArrayView1<f64>) -> ndarray::Array1<f64> {
    let mut d = h.to_owned();
    Zip::from(&mut d).and(&r).and(&t).for_each(|d, &r, &t| *d += r - t);
    d
}

/// `max(0, γ + d_pos − d_neg)`.
pub fn margin_loss(d_pos: f64, d_neg: f64, gamma: f64) -> f64 {
    (gamma + d_pos - d_neg).max(0.0)
}

/// Sum of hinge terms over `(positive, negative)` pairs. When gradient
/// buffers are given, `scale ×` the subgradient of the sum is added to them.
///
/// Subgradient conventions: an inactive or exactly-zero hinge contributes
/// nothing, and a zero-length residual has zero gradient.
pub fn hinge_sum(
    emb: &KgEmbeddings,
    pairs: &[(Triple, Triple)],
    gamma: f64,
    scale: f64,
    mut grads: Option<(ArrayViewMut2<f64>, ArrayViewMut2<f64>)>,
) -> f64 {
    let mut total = 0.0;
    for (pos, neg) in pairs {
        let rp = translation_residual(
            emb.entities.row(pos.head.index()),
            emb.relations.row(pos.relation.index()),
            emb.entities.row(pos.tail.index()),
        );
        let rn = translation_residual(
            emb.entities.row(neg.head.index()),
            emb.relations.row(neg.relation.index()),
            emb.entities.row(neg.tail.index()),
        );
        let dp = rp.dot(&rp).sqrt();
        let dn = rn.dot(&rn).sqrt();
        let term = gamma + dp - dn;
        if term <= 0.0 {
            continue;
        }
        total += term;
        let Some((ge, gr)) = grads.as_mut() else { continue };
        for (triple, resid, dist, sign) in [(pos, &rp, dp, 1.0), (neg, &rn, dn, -1.0)] {
            if dist == 0.0 {
                continue;
            }
            let coef = scale * sign / dist;
            ge.row_mut(triple.head.index()).scaled_add(coef, resid);
            gr.row_mut(triple.relation.index()).scaled_add(coef, resid);
            ge.row_mut(triple.tail.index()).scaled_add(-coef, resid);
        }
    }
    total
}

/// Draws `negatives_per_positive` corruptions for every triple of `graph`.
pub fn sample_pairs<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    negatives_per_positive: usize,
    rng: &mut R,
) -> Result<Vec<(Triple, Triple)>> {
    let mut pairs = Vec::with_capacity(graph.triple_count() * negatives_per_positive);
    for t in graph.triples() {
        for _ in 0..negatives_per_positive {
            pairs.push((*t, graph.sample_negative(t, rng)?));
        }
    }
    Ok(pairs)
}

/// Full-graph margin loss with freshly sampled negatives and its exact
/// subgradient.
pub fn kg_loss_epoch<R: Rng + ?Sized>(
    emb: &KgEmbeddings,
    graph: &KnowledgeGraph,
    cfg: &MarginConfig,
    rng: &mut R,
) -> Result<(f64, KgGradients)> {
    cfg.validate()?;
    if graph.triple_count() == 0 {
        return Err(Error::EmptyBatch);
    }
    let pairs = sample_pairs(graph, cfg.negatives_per_positive, rng)?;
    let mut grads = KgGradients::zeros_like(emb);
    let loss = hinge_sum(
        emb,
        &pairs,
        cfg.gamma,
        1.0,
        Some((grads.entities.view_mut(), grads.relations.view_mut())),
    );
    Ok((loss, grads))
}

/// Runs `epochs` rounds of full-graph SGD and returns the per-epoch loss.
pub fn train_epochs<R: Rng + ?Sized>(
    emb: &mut KgEmbeddings,
    graph: &KnowledgeGraph,
    cfg: &MarginConfig,
    epochs: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grads) = kg_loss_epoch(emb, graph, cfg, rng)?;
        emb.sgd_step(&grads, cfg.learning_rate)?;
        losses.push(loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, EntityId, EntityKind, NamedTriple};
    use ndarray::{array, Array1};

    fn emb2(entities: Array2<f64>, relation: [f64; 2]) -> KgEmbeddings {
        let mut relations = Array2::zeros((RelationKind::COUNT, 2));
        relations.row_mut(0).assign(&ndarray::arr1(&relation));
        KgEmbeddings { entities, relations }
    }

    fn t(h: u32, tl: u32) -> Triple {
        Triple {
            head: EntityId(h),
            relation: RelationKind::Clicks,
            tail: EntityId(tl),
        }
    }

    #[test]
    fn score_examples() {
        let e = emb2(array![[1.0, 0.0], [1.0, 0.0]], [0.0, 0.0]);
        assert_eq!(e.score_triple(&t(0, 1)).unwrap(), 0.0);
        let e = emb2(array![[1.0, 0.0], [1.0, 1.0]], [0.0, 1.0]);
        assert_eq!(e.score_triple(&t(0, 1)).unwrap(), 0.0);
        let e = emb2(array![[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        assert!((e.score_triple(&t(0, 1)).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(matches!(e.score_triple(&t(0, 7)), Err(Error::UnknownEntity(_))));
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin_loss(0.0, 2.0, 1.0), 0.0);
        assert_eq!(margin_loss(0.7, 0.7, 1.0), 1.0);
        assert!((margin_loss(1.2, 0.3, 0.5) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn sgd_step_examples() {
        let mut e = emb2(array![[0.5, 0.0]], [0.0, 0.0]);
        let mut g = KgGradients::zeros_like(&e);
        g.entities[[0, 0]] = 1.0;
        e.sgd_step(&g, 0.1).unwrap();
        assert!((e.entities[[0, 0]] - 0.4).abs() < 1e-12);
        assert_eq!(e.entities[[0, 1]], 0.0);

        let before = e.clone();
        e.sgd_step(&KgGradients::zeros_like(&e), 0.5).unwrap();
        assert_eq!(e, before);
        e.sgd_step(&g, 0.0).unwrap();
        assert_eq!(e, before);

        let bad = KgGradients {
            entities: Array2::zeros((3, 2)),
            relations: Array2::zeros((RelationKind::COUNT, 2)),
        };
        assert!(matches!(e.sgd_step(&bad, 0.1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn inactive_hinge_has_zero_loss_and_gradient() {
        // positive exact, negative far away: γ + 0 − 3 < 0
        let e = emb2(array![[0.0, 0.0], [0.0, 0.0], [3.0, 0.0]], [0.0, 0.0]);
        let mut ge = Array2::zeros((3, 2));
        let mut gr = Array2::zeros((RelationKind::COUNT, 2));
        let l = hinge_sum(&e, &[(t(0, 1), t(0, 2))], 1.0, 1.0, Some((ge.view_mut(), gr.view_mut())));
        assert_eq!(l, 0.0);
        assert!(ge.iter().chain(gr.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn active_hinge_head_gradient() {
        let e = emb2(array![[0.3, 0.1], [0.0, 0.4], [0.2, 0.2]], [0.1, -0.1]);
        let mut ge = Array2::zeros((3, 2));
        let mut gr = Array2::zeros((RelationKind::COUNT, 2));
        hinge_sum(&e, &[(t(0, 1), t(0, 2))], 1.0, 1.0, Some((ge.view_mut(), gr.view_mut())));
        let rp: Array1<f64> = array![0.3 + 0.1 - 0.0, 0.1 - 0.1 - 0.4];
        let rn: Array1<f64> = array![0.3 + 0.1 - 0.2, 0.1 - 0.1 - 0.2];
        let expected = &rp / rp.dot(&rp).sqrt() - &rn / rn.dot(&rn).sqrt();
        for k in 0..2 {
            assert!((ge[[0, k]] - expected[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_triple_step_reduces_hinge() {
        let ents: Vec<Entity> = (0..3)
            .map(|i| Entity::new(format!("e{i}"), if i == 0 { EntityKind::User } else { EntityKind::Ad }, ""))
            .collect();
        let g = KnowledgeGraph::build(ents, &[NamedTriple::new("e0", RelationKind::Clicks, "e1")]).unwrap();
        let mut e = emb2(array![[0.3, 0.1], [0.0, 0.4], [0.2, 0.2]], [0.1, -0.1]);
        let pair = [(t(0, 1), t(0, 2))];
        let before = hinge_sum(&e, &pair, 1.0, 1.0, None);
        assert!(before > 0.0);
        let mut grads = KgGradients::zeros_like(&e);
        hinge_sum(&e, &pair, 1.0, 1.0, Some((grads.entities.view_mut(), grads.relations.view_mut())));
        e.sgd_step(&grads, 1e-3).unwrap();
        assert!(hinge_sum(&e, &pair, 1.0, 1.0, None) < before);
        assert_eq!(g.triple_count(), 1);
    }

    #[test]
    fn snapshot_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ents: Vec<Entity> = (0..4).map(|i| Entity::new(format!("e{i}"), EntityKind::Ad, "x")).collect();
        let g = KnowledgeGraph::build(ents, &[]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let e = KgEmbeddings::random(4, 8, &mut rng);
        let path = dir.path().join("kg.emb");
        e.save(&path, &g).unwrap();
        let back = KgEmbeddings::load(&path).unwrap();
        assert_eq!(back.entities.dim(), (4, 8));
        for (a, b) in e.entities.iter().zip(back.entities.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let ids = std::fs::read_to_string(id_map_path(&path)).unwrap();
        assert!(ids.starts_with("0\tentity\te0\n"));
        assert!(ids.contains("4\trelation\tClicks"));
    }

    use rand::SeedableRng;

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn matrix(rows: usize, dim: usize, scale: f64) -> impl Strategy<Value = Array2<f64>> {
            proptest::collection::vec(-scale..scale, rows * dim)
                .prop_map(move |v| Array2::from_shape_vec((rows, dim), v).unwrap())
        }

        fn setup() -> impl Strategy<Value = (KgEmbeddings, Array2<f64>, Array2<f64>)> {
            (1usize..8).prop_flat_map(|d| {
                (
                    matrix(5, d, 3.0),
                    matrix(RelationKind::COUNT, d, 3.0),
                    matrix(5, d, 10.0),
                    matrix(RelationKind::COUNT, d, 10.0),
                )
                    .prop_map(|(e, r, ge, gr)| (KgEmbeddings { entities: e, relations: r }, ge, gr))
            })
        }

        proptest! {
            #[test]
            fn entity_rows_stay_in_unit_ball((mut emb, ge, gr) in setup(), lr in 0.0f64..5.0) {
                emb.renormalize();
                emb.sgd_step(&KgGradients { entities: ge, relations: gr }, lr).unwrap();
                for row in emb.entities.rows() {
                    prop_assert!(row.dot(&row).sqrt() <= 1.0 + 1e-6);
                }
            }

            #[test]
            fn hinge_is_non_negative((emb, _, _) in setup(), gamma in 0.01f64..3.0, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = || t(rng.random_range(0..5), rng.random_range(0..5));
                let pairs: Vec<(Triple, Triple)> = (0..6).map(|_| (draw(), draw())).collect();
                prop_assert!(hinge_sum(&emb, &pairs, gamma, 1.0, None) >= 0.0);
                for (p, n) in &pairs {
                    let l = margin_loss(emb.score_triple(p).unwrap(), emb.score_triple(n).unwrap(), gamma);
                    prop_assert!(l >= 0.0);
                }
            }

            #[test]
            fn score_is_translation_covariant((emb, shift, _) in setup(), h in 0u32..5, tl in 0u32..5) {
                let before = emb.score_triple(&t(h, tl)).unwrap();
                let mut moved = emb.clone();
                let c: Array1<f64> = shift.row(0).to_owned();
                moved.entities.row_mut(h as usize).assign(&(&emb.entities.row(h as usize) + &c));
                if h != tl {
                    moved.entities.row_mut(tl as usize).assign(&(&emb.entities.row(tl as usize) + &c));
                }
                let after = moved.score_triple(&t(h, tl)).unwrap();
                prop_assert!((before - after).abs() < 1e-9);
            }
        }
    }
}
