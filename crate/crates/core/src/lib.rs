pub mod bargain;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod policy;
pub mod report;
pub mod reward;
pub mod selfplay;
pub mod supervised;
pub mod tournament;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/bargaining.md")]
    struct Bargaining;
    #[doc = include_str!("../../../book/src/rewards.md")]
    struct Rewards;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/tournament.md")]
    struct Tournament;
}
