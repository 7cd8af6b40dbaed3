//! Monte Carlo test battery.
mod battery;
mod report;
mod table;

pub use battery::{
    analytic_marginal, normal_lower_tail, small_time_reference, test_cluster_count, test_marginal_law,
    test_meeting_bound, test_shift_invariance, test_small_time_continuity, test_stopped_equivalence, test_two_point_law,
    ClusterCountParams, MarginalParams, MeetingBoundParams, ShiftInvarianceParams, SmallTimeParams, StoppedParams, TwoPointParams,
    TestRun,
};
pub use report::{bonferroni, ReportBundle, Rule, Status, TestReport};
pub use table::ReplicaTable;
