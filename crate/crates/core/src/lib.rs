pub mod error;
pub mod exactlaw;
pub mod lab;
pub mod logspace;
pub mod offspring;
pub mod oracle;
pub mod sampler;
pub mod stats;
pub mod treekit;

pub use error::{GwError, Result};
pub use offspring::{Criticality, ExtinctionParams, Geometric, IteratedLaw, OffspringParams};
pub use treekit::{CanonicalCode, EnumerationSpec, LawMeta, OrderedTree, TruncatedLaw};
