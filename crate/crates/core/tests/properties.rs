mod common;

use common::props;

#[test]
fn soc_stays_in_bounds() {
    props::soc_bounds().unwrap();
}

#[test]
fn energy_is_balanced() {
    props::energy_balance().unwrap();
}

#[test]
fn same_seed_same_day() {
    props::determinism().unwrap();
}

#[test]
fn replay_is_fifo() {
    props::replay_fifo().unwrap();
}

#[test]
fn replay_samples_uniformly() {
    props::replay_sampling().unwrap();
}

#[test]
fn ba_edge_count_formula() {
    props::ba_edges().unwrap();
}
