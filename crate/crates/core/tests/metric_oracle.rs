//! Every metric and mask against a direct, loop-based recomputation.

mod oracle;

#[test]
fn flow_metrics_match_loops() {
    oracle::flow_metrics(oracle::GRIDS).unwrap();
}

#[test]
fn top_n_matches_sorting_oracle() {
    oracle::top_n(oracle::GRIDS).unwrap();
}

#[test]
fn nonzero_mask_matches_loop() {
    oracle::nonzero(oracle::GRIDS).unwrap();
}

#[test]
fn canny_mask_matches_textbook_implementation() {
    oracle::canny(oracle::GRIDS).unwrap();
}
