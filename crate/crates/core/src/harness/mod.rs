//! Training runs, hyperparameter search, Monte Carlo repetition and the
//! statistics used to compare them.

pub mod eval;
pub mod grid;
pub mod montecarlo;
pub mod stats;
pub mod teacher;
pub mod train;

pub use eval::{
    accuracy, argmax, balanced_accuracy, batched_infer, filtered_eval, predictions, FilteredEval,
};
pub use grid::{config_id, grid_search, GridCell, GridResult, GridSpace};
pub use montecarlo::{mc_subset, monte_carlo};
pub use stats::{
    lilliefors, lilliefors_with, mean, median, paired_t_test, relative_delta_acc, std_dev,
    summarize, variance, Lilliefors, StatsSummary, TTest,
};
pub use teacher::{precompute_teacher_outputs, TeacherHeader, TeacherOutputs};
pub use train::{
    loss_and_grads, train_step, train_student, train_student_with, BatchTargets, EpochStats,
    RunRecord, Signals, TrainOptions,
};
