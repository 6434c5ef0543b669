//! Small from-scratch neural toolkit: dense chains, stacked LSTMs, Adam and
//! plain gradient descent. Reverse mode is written out per architecture;
//! forward passes return tapes that the matching backward consumes.

pub mod dense;
pub mod lstm;
pub mod optim;
pub mod params;
pub mod snapshot;

pub use dense::{Activation, Mlp, MlpTape};
pub use lstm::{LstmLayer, LstmNet, LstmNetTape};
pub use optim::{gd_step, gd_step_params, Adam};
pub use params::{Block, ParamSet, TapeStamp};
