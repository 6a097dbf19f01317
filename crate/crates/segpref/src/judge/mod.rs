//! Judge backends beyond the in-core mock.

pub mod output;
pub mod remote;
pub mod replay;

pub use remote::{RemoteConfig, RemoteJudge};
pub use replay::{RecordingJudge, ReplayJudge, ReplayRecord};
