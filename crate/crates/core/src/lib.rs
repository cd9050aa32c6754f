pub mod data;
pub mod error;
pub mod evaluation;
pub mod hsic_select;
pub mod kernel_models;
pub mod linalg;
pub mod linear_models;
pub mod pipeline;
pub mod power_curve;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type LinearModelF64 = linear_models::LinearModel<f64>;
pub type LinearModelF32 = linear_models::LinearModel<f32>;
pub type ExactKrrModelF64 = kernel_models::ExactKrrModel<f64>;
pub type ExactKrrModelF32 = kernel_models::ExactKrrModel<f32>;
pub type NystromKrrModelF64 = kernel_models::NystromKrrModel<f64>;
pub type NystromKrrModelF32 = kernel_models::NystromKrrModel<f32>;
pub type SupervisedDatasetF64 = data::SupervisedDataset<f64>;
pub type SupervisedDatasetF32 = data::SupervisedDataset<f32>;
pub type StandardizerF64 = data::Standardizer<f64>;
pub type StandardizerF32 = data::Standardizer<f32>;
