// SPDX-License-Identifier: MIT OR Apache-2.0

//! # ts-lens
//!
//! Interpretability tools for a small encoder-only time-series transformer:
//! synthetic pattern data, residual-stream capture, layer similarity (CKA,
//! cosine, SVCCA), redundant-block detection and pruning, linear concept
//! probes, and activation steering.
//!
//! ```
//! use ts_lens::prelude::*;
//!
//! # fn main() -> ts_lens::Result<()> {
//! let config = ModelConfig { layers: 2, dim: 16, heads: 2, ..ModelConfig::default() };
//! let weights = init_model(&config)?;
//! let specs = [GenSpec::desk(PatternClass::Constant), GenSpec::desk(PatternClass::SineConstant)];
//! let data = make_dataset(&specs, 8, 128, 7, false)?;
//! let caps = capture(&weights, &data, &SkipMask::none(config.layers), None)?;
//! assert_eq!(caps.dims(), [3, 16, 16, 16]);
//! # Ok(())
//! # }
//! ```

pub mod blocks;
pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod probe;
pub mod similarity;
pub mod steer;
pub mod synthgen;

pub use error::{Error, Result};

/// Common imports.
pub mod prelude {
    pub use crate::blocks::{
        bench, encoder_sparsity, identify_blocks, plan_prune, Block, BlockSet, LatencyStats,
        PruningPlan, Selection,
    };
    pub use crate::error::{Error, Result};
    pub use crate::model::{
        capture, decode, fit_readout, forward, init_model, zero_block_weights, CaptureSet,
        ModelConfig, ReadoutHead, SkipMask, Steer, Weights,
    };
    pub use crate::numerics::Matrix;
    pub use crate::probe::{fit_fisher_probe, ldr_map, predict, probe_token_averaged, Probe};
    pub use crate::similarity::{layer_matrix, linear_cka, LayerMatrixOptions, Metric, Reduction};
    pub use crate::steer::{
        compose, derive_steering, negate, LayerSelection, SteerConfig, SteeringMatrix, Stat,
        TokenMode,
    };
    pub use crate::synthgen::{default_corpus, make_dataset, GenSpec, PatternClass, SeriesSet};
}

/// Book chapters, compiled as doctests so their examples stay current.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/similarity.md")]
    mod similarity {}
    #[doc = include_str!("../../../book/src/blocks.md")]
    mod blocks {}
    #[doc = include_str!("../../../book/src/probing.md")]
    mod probing {}
    #[doc = include_str!("../../../book/src/steering.md")]
    mod steering {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
