pub mod config;
pub mod corpus;
pub mod decoding;
pub mod encoder;
pub mod error;
pub mod lm;
pub mod mwer;
pub mod nn;
pub mod pipeline;
pub mod numerics;
pub mod report;
pub mod scalar;
pub mod tokenizer;
pub mod transducer;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

/// Single-precision aliases, as used by the pipeline.
pub mod f32 {
    pub type Tensor = crate::numerics::Tensor<f32>;
    pub type Encoder = crate::encoder::Encoder<f32>;
    pub type LanguageModel = crate::lm::LanguageModel<f32>;
    pub type FactorizedTransducer = crate::transducer::FactorizedTransducer<f32>;
    pub type Utterance = crate::transducer::Utterance<f32>;
}

/// Double-precision aliases, used by the gradient and oracle checks.
pub mod f64 {
    pub type Tensor = crate::numerics::Tensor<f64>;
    pub type Encoder = crate::encoder::Encoder<f64>;
    pub type LanguageModel = crate::lm::LanguageModel<f64>;
    pub type FactorizedTransducer = crate::transducer::FactorizedTransducer<f64>;
    pub type Utterance = crate::transducer::Utterance<f64>;
}
