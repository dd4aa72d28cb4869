//! Running independent streams and ablation configs side by side.
//!
//! Frames inside a stream depend on their predecessors, so parallelism is
//! across streams. Without the `parallel` feature every mode runs
//! sequentially.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pipeline::{process_stream, FrameObservation, StabilizedFrame, StabilizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl fmt::Display for Execution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Execution::Sequential => "sequential",
            Execution::Parallel => "parallel",
        })
    }
}

impl FromStr for Execution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Execution::Sequential),
            "parallel" => Ok(Execution::Parallel),
            _ => Err(Error::Config(format!("unknown execution mode '{s}'"))),
        }
    }
}

/// Applies `f` to every item, preserving order.
pub fn map_items<T, U, F>(items: &[T], exec: Execution, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Stabilizes each stream with its own fresh stabilizer.
pub fn process_streams(
    streams: &[Vec<FrameObservation>],
    config: &StabilizerConfig,
    exec: Execution,
) -> Vec<Result<Vec<StabilizedFrame>>> {
    map_items(streams, exec, |s| process_stream(s, config))
}

/// Stabilizes one stream once per config.
pub fn ablation_sweep(
    observations: &[FrameObservation],
    configs: &[StabilizerConfig],
    exec: Execution,
) -> Vec<Result<Vec<StabilizedFrame>>> {
    map_items(configs, exec, |c| process_stream(observations, c))
}
