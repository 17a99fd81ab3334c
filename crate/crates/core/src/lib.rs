//! Link-level simulation of doubly-selective OFDM channels and
//! frame-by-frame channel estimation with bidirectional recurrent networks.
//!
//! The pipeline is: [`modem`] builds frames, [`channel`] fades them,
//! [`estimators`] produces pilot-symbol estimates and the network input,
//! [`rnn`] interpolates over the whole frame, [`training`] fits the network,
//! [`evaluation`] measures BER/NMSE and [`complexity`] counts operations.

pub mod channel;
pub mod complexity;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod link;
pub mod modem;
pub mod rnn;
pub mod special;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;
