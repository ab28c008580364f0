//! Case-study programs and the analyses run over their traces.

pub mod cases;
pub mod fsm;
pub mod jitter;
pub mod music;
pub mod snapshot;

pub use cases::{prepare_case, run_case_study, CaseOptions, CaseStudy, PreparedCase};
pub use fsm::{complex_fsm_table, four_button_table, fsm_conformance, ConformanceReport, FsmInput, FsmOutput, FsmSpec};
pub use jitter::{edges, measure_jitter, measure_jitter_window, write_times, JitterReport};
pub use music::{fib_tailrec, time_write, Note, DURATIONS, TWINKLE};
pub use snapshot::Snapshot;
