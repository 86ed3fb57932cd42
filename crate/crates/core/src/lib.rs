//! Open-set Wi-Fi gesture recognition pipeline.
//!
//! The crate covers the whole chain from channel state information (CSI) to an
//! open-set decision:
//!
//! * [`data`]: CSI records, open-set splits and the CSIB container format.
//! * [`synth`]: a multipath channel simulator with ground-truth Doppler.
//! * [`preprocess`]: antenna selection, CSI ratio, Butterworth filtering,
//!   Doppler spectrograms and network input tensors.
//! * [`uncertainty`]: GMM noise uncertainty and neighborhood domain uncertainty.
//! * [`net`]: a small differentiable network engine with analytic gradients.
//! * [`osgr`]: neighbor loss, reconstruction loss, feature bank, KNN decisions
//!   and the adaptive rejection threshold.
//! * [`metrics`]: openness, AUROC, accuracy and risk reports.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is on and plain iterators otherwise. Results never depend
//! on the thread count.

pub mod data;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod net;
pub mod osgr;
pub mod par;
pub mod preprocess;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
