//! Data: the benchmark generating processes, moving-squares clips and
//! chronological splits.

mod dgp;
mod split;
mod video;

pub use dgp::{
    simulate, simulate_stream, stream_rng, ArmaProcess, CoupledProcess, DgpSpec, HeteroMa2Process,
    NarProcess, Process, TarProcess, VarmaProcess,
};
pub use split::{split, split_default, split_sizes, SplitSizes, TRAIN_FRAC, VAL_FRAC_OF_TRAIN};
pub use video::{generate_video, VideoKind, VideoSpec};
