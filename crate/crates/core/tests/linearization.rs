mod common;

use common::sample_graphs;
use common::structure::{linearization_validity, rep1_mode_invariance};
use structadapt::corpus::generate_corpus;
use structadapt::tokenizer::Vocabulary;
use structadapt::train::vocab_corpus;

#[test]
fn reparsed_linearizations_are_isomorphic() {
    linearization_validity(&sample_graphs(500, 10), 3).unwrap();
}

#[test]
fn rep1_structure_is_mode_invariant() {
    let vocab = Vocabulary::train(&vocab_corpus(&generate_corpus(200, 4, 12, 0.3)), 400).unwrap();
    let graphs = sample_graphs(500, 11);
    let trees = rep1_mode_invariance(&graphs, &vocab).unwrap();
    assert!(trees > 50 && trees < graphs.len(), "{trees} single-mention graphs");
    rep1_mode_invariance(&graphs, &Vocabulary::bytes_only()).unwrap();
}
