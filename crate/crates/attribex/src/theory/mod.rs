//! Brute-force reference implementations (exact Shapley values, interaction
//! index, deep-Taylor messages) and machine checks of the equivalence
//! results connecting the explanation methods.

pub mod dtd;
pub mod propositions;
pub mod shapley;

pub use dtd::{dtd_backward, dtd_messages_dense};
pub use propositions::{
    table1_checks, verify_propositions, PropositionCheck, PropositionReport,
};
pub use shapley::{
    shapley_exact, shapley_interaction, CoalitionGame, ShapleyResult, MAX_PLAYERS,
    MAX_PLAYERS_INTERACTION,
};
