//! Neural metric factorization for drug-disease association prediction.
//!
//! Drugs and diseases become points in a shared latent space. A learnable,
//! per-dimension weighted squared Euclidean distance between a drug and a
//! disease is turned into a treatment probability; the closer the points,
//! the likelier the association. Latent points come either from small
//! autoencoders over association profiles, regularized by drug and disease
//! similarity (`nmf`), or from free embedding tables (`nmf_oh`). An
//! inner-product baseline (`mf`) is included for comparison.
//!
//! Modules, bottom-up: [`numkit`] (dense kernel, Adam, gradient checks),
//! [`dataset`], [`encoder`], [`scorer`], [`trainer`], [`evaluator`].

pub mod dataset;
pub mod encoder;
pub mod evaluator;
pub mod numkit;
pub mod par;
pub mod scorer;
pub mod trainer;

pub use dataset::{AssociationMatrix, DataSplit, DatasetBundle, Pair, SimilarityMatrix};
pub use numkit::{DenseMatrix, ParamTensor, RngStream};
pub use par::Exec;
pub use trainer::{ModelState, TrainConfig, Variant};
