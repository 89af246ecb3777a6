//! Privacy-preserving retrieval over JPEG images encrypted in the
//! quantized-coefficient domain.

use std::fmt;

use serde::{Deserialize, Serialize};

mod bits;
pub mod codec;
mod error;
pub mod cipher;
pub mod features;
pub mod index;
pub mod keys;
pub mod perm;
pub mod sim;

pub use bits::BitString;
pub use error::{Error, Result};

/// Local histogram of one block, in `f64`.
pub type LocalAcHist = features::LocalAcHist<f64>;
/// Visual-word vocabulary, in `f64`.
pub type Vocabulary = features::Vocabulary<f64>;
/// Image descriptor, in `f64`.
pub type BowFeature = features::BowFeature<f64>;
/// Distance weights, in `f64`.
pub type Weights = features::Weights<f64>;
/// Linear index, in `f64`.
pub type LinearIndex = index::LinearIndex<f64>;
/// Ranked result list, in `f64`.
pub type SearchResult = index::SearchResult<f64>;

/// Colour component of a YUV (YCbCr) JPEG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    Y,
    U,
    V,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Y, Component::U, Component::V];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Component::Y => "Y",
            Component::U => "U",
            Component::V => "V",
        };
        f.write_str(s)
    }
}
