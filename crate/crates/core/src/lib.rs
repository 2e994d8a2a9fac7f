pub mod archive;
pub mod backbone;
pub mod bench;
pub mod codec;
pub mod degrade;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Video32 = video::VideoSequence<f32>;
pub type Video64 = video::VideoSequence<f64>;
pub type Codec32 = codec::Codec<f32>;
pub type Codec64 = codec::Codec<f64>;
pub type Toy32 = backbone::ToyBackbone<f32>;
pub type Toy64 = backbone::ToyBackbone<f64>;
pub type Flow32 = flow::FlowField<f32>;
pub type Flow64 = flow::FlowField<f64>;
pub type Sample32 = synth::Sample<f32>;
