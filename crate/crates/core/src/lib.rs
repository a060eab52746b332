//! Co-design toolkit for lightweight precision motion stages.
//!
//! The pipeline is sequential: minimize stage mass under modal-frequency
//! constraints (`geometry` over `fem`), place transducers by modal grammians
//! (`placement`), build the decoupled modal plant (`plant`), and shape
//! fixed-structure SISO loops for maximum bandwidth under a sensitivity-peak
//! bound (`control`).

pub mod cobyla;
pub mod control;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod placement;
pub mod plant;

pub use error::CoreError;
