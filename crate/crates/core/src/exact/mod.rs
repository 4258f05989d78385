//! Ground-truth Information Pursuit on finite discrete tasks.

mod model;
mod pursuit;
mod synthetic;

pub use model::{DiscreteHistory, DiscreteTaskModel, JointTable, TaskModel, MAX_JOINT_CELLS};
pub use pursuit::{
    empirical_mi, entropy, exact_ip_run, exact_posterior, most_informative_query,
    most_informative_set, mutual_information, Binning, SignRow, SymbolSource, MI_TIE_TOL,
};
pub use synthetic::{
    bayes_accuracy, make_synthetic_task, sample_dataset, QueryRole, SyntheticTask,
    SyntheticTaskConfig,
};
