//! End-to-end workflow behind the command line tool: configuration,
//! training loops with resumable checkpoints, duration extraction,
//! synthesis and benchmarking.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod store;
pub mod toy;

pub use commands::{
    benchmark, benchmark_table, extract, fit_durations, load_student, load_teacher, real_time_factor,
    synthesize_to_wav, train_student, train_teacher, BenchmarkRow, BenchmarkSpec, ExtractReport, LoadedStudent,
    StudentEval, StudentReport, SynthInput, SynthesisReport, TeacherReport, TrainOptions, BENCHMARK_TEXT,
};
pub use config::{student_hash, teacher_hash, PipelineConfig};
pub use metrics::{read_metrics, MetricsLog};
pub use store::{Loaded, ModelKind, TrainState};
pub use toy::make_toy;
