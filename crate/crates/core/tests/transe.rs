//! TransE training and filtered ranking against a brute-force oracle.

mod common;

use kgalign::kg::{EmbeddingTable, EntityId, RelationId, Vocab};
use kgalign::kge::{evaluate_ranking, filtered_ranks, score, train_transe, TranseConfig};
use ndarray::array;

#[test]
fn score_fixture_is_exactly_zero() {
    let table = EmbeddingTable::new(
        Vocab::from_labels(["h", "t"]).unwrap(),
        Vocab::from_labels(["r"]).unwrap(),
        array![[1.0, 0.0], [1.0, 1.0]],
        array![[0.0, 1.0]],
    )
    .unwrap();
    assert_eq!(score(EntityId(0), RelationId(0), EntityId(1), &table).unwrap(), 0.0);
}

#[test]
fn tree_reaches_high_mrr_and_matches_oracle() {
    let kg = common::random_tree(50, 5, 0);
    assert_eq!(kg.num_entities(), 50);
    let cfg = TranseConfig { dim: 16, epochs: 500, seed: 0, ..Default::default() };
    let table = train_transe(&kg, &cfg).unwrap();
    let report = evaluate_ranking(&kg, kg.triples(), &table).unwrap();
    assert!(report.mrr >= 0.9, "{report:?}");
    let ranks = filtered_ranks(&kg, kg.triples(), &table).unwrap();
    assert_eq!(ranks, common::brute_force_ranks(&kg, &table, kg.triples()));
    let mrr = ranks.iter().flat_map(|&(h, t)| [h, t]).map(|r| 1.0 / r as f64).sum::<f64>() / (2 * ranks.len()) as f64;
    assert_eq!(report.mrr, mrr);
    assert_eq!(train_transe(&kg, &cfg).unwrap(), table);
}
