//! End-to-end open-vocabulary keyword search.
//!
//! A pair of recurrent encoders maps spoken documents to dense frame-level
//! vectors and written queries to single vectors; search is an inner product
//! followed by sigmoid thresholding and island detection; results are scored
//! with the term-weighted-value metric family. A synthetic-corpus generator
//! makes the whole pipeline testable at desk scale.

pub mod data;
pub mod index;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scorer;
pub mod trainer;
